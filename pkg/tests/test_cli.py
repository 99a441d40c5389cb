import csv
import subprocess
import sys
import textwrap

import pytest

from betascope.cli import (
    EXIT_COST,
    EXIT_INPUT,
    EXIT_INVARIANT,
    EXIT_OK,
    EXIT_USAGE,
    load_config,
    main,
)


def write_config(tmp_path, text, name="run.ini"):
    p = tmp_path / name
    p.write_text(textwrap.dedent(text))
    return p


def summary(path):
    out = {}
    for line in path.read_text().splitlines():
        k, _, v = line.partition(" = ")
        out[k] = v
    return out


def analyze(tmp_path, measure_section, out, extra="atoms = all"):
    text = f"[run]\ndepth = 3\n{extra}\n[measure]\n{measure_section}\n"
    cfg = tmp_path / f"{out}.ini"
    cfg.write_text(text)
    code = main(["analyze", "--config", str(cfg), "--out", str(tmp_path / out)])
    return code, tmp_path / out


def test_generate_then_analyze_matches_lebesgue_bytes(tmp_path):
    cfg = write_config(tmp_path, """
        [measure]
        generator = cascade
        delta = 1/3
        gen_depth = 2
        periodic = no
        """, name="gen.ini")
    assert main(["generate", "--config", str(cfg), "--out", str(tmp_path / "gen")]) == EXIT_OK
    measure_file = tmp_path / "gen" / "measure.txt"
    assert measure_file.exists()
    code_a, a = analyze(tmp_path, f"input = {measure_file}", "a")
    code_b, b = analyze(tmp_path, "generator = lebesgue\nlevel = 2\nbase = 3", "b")
    assert code_a == code_b == EXIT_OK
    assert (a / "cubes.csv").read_bytes() == (b / "cubes.csv").read_bytes()
    assert (a / "profiles.csv").read_bytes() == (b / "profiles.csv").read_bytes()


def test_analyze_is_deterministic(tmp_path):
    section = "generator = random\ncount = 80\nseed = 3"
    _, a = analyze(tmp_path, section, "r1", extra="variants = ordinary,normalized,shifted\natoms = 10")
    _, b = analyze(tmp_path, section, "r2", extra="variants = ordinary,normalized,shifted\natoms = 10")
    for name in ("cubes.csv", "profiles.csv", "summary.txt"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_line_measure_has_zero_jones_columns(tmp_path):
    section = "generator = curve\natoms_per_unit_length = 64\n[curve]\nvertices = 0.1 0.5; 0.9 0.5"
    code, out = analyze(tmp_path, section, "line")
    assert code == EXIT_OK
    with open(out / "profiles.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert rows and all(float(r["increment"]) == 0.0 and float(r["partial_sum"]) == 0.0 for r in rows)
    with open(out / "cubes.csv") as fh:
        assert all(float(r["beta2"]) == 0.0 for r in csv.DictReader(fh))


def test_shifted_grid_and_recenter(tmp_path):
    measure = tmp_path / "far.txt"
    measure.write_text("n=2\n3.0 5.0 1.0\n7.0 5.5 1.0\n4.0 6.0 1.0\n")
    code, out = analyze(tmp_path, f"input = {measure}", "far", extra="shift = 1/3")
    assert code == EXIT_OK
    s = summary(out / "summary.txt")
    assert float(s["recenter_scale"]) != 1.0
    assert s["grid"] != summary_of_default(tmp_path)["grid"]
    with open(out / "cubes.csv") as fh:
        assert all(0 <= float(r["beta2"]) <= 1 for r in csv.DictReader(fh))


def summary_of_default(tmp_path):
    _, out = analyze(tmp_path, "generator = random\ncount = 5", "default_grid")
    return summary(out / "summary.txt")


def test_report_recomputes_from_tables(tmp_path):
    _, out = analyze(tmp_path, "generator = random\ncount = 40", "rep")
    cfg = write_config(tmp_path, f"[report]\ninput_dir = {out}\n", name="report.ini")
    assert main(["report", "--config", str(cfg), "--out", str(out)]) == EXIT_OK
    rep, summ = summary(out / "report.txt"), summary(out / "summary.txt")
    for lev in range(0, 4):
        assert rep[f"beta2_level{lev}_median"] == summ[f"beta2_level{lev}_median"]
        assert rep[f"cubes_level{lev}"] == summ[f"cubes_level{lev}"]


def test_report_without_tables(tmp_path):
    cfg = write_config(tmp_path, f"[report]\ninput_dir = {tmp_path / 'nothing'}\n")
    assert main(["report", "--config", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_INPUT


def test_certify_staircase_fixture(tmp_path):
    cfg = write_config(tmp_path, """
        [curve]
        staircase_length = 4
        seed = 0
        [certificate]
        atoms_per_unit_length = 200
        background_atoms = 100
        depth = 6
        """)
    assert main(["certify", "--config", str(cfg), "--out", str(tmp_path / "c")]) == EXIT_OK
    s = summary(tmp_path / "c" / "certificate.txt")
    assert s["check_offcurve_term_le_bound"] == "pass"
    assert float(s["offcurve_term"]) <= float(s["offcurve_bound"])
    assert s["passed"] == "yes"


def test_certify_hypothesis_violation_exit(tmp_path):
    cfg = write_config(tmp_path, """
        [curve]
        vertices = 0.1 0.5; 0.9 0.5
        [certificate]
        atoms_per_unit_length = 100
        background_atoms = 0
        background_fraction = 0
        c_E = 50
        depth = 5
        """)
    assert main(["certify", "--config", str(cfg), "--out", str(tmp_path / "c")]) == EXIT_INVARIANT


def test_whitney_and_curvature(tmp_path):
    cfg = write_config(tmp_path, """
        [curve]
        vertices = 0 0.5; 1 0.5
        [whitney]
        max_level = 5
        [measure]
        generator = random
        count = 30
        [curvature]
        mode = exact
        """)
    assert main(["whitney", "--config", str(cfg), "--out", str(tmp_path / "w")]) == EXIT_OK
    lines = (tmp_path / "w" / "whitney.csv").read_text().splitlines()
    assert lines and all(len(line.split()) == 5 for line in lines)
    assert main(["curvature", "--config", str(cfg), "--out", str(tmp_path / "k")]) == EXIT_OK
    s = summary(tmp_path / "k" / "summary.txt")
    assert float(s["energy"]) > 0 and s["mode"] == "exact"


def test_exit_codes(tmp_path):
    bad_variant = write_config(tmp_path, "[run]\nvariants = bogus\n[measure]\ngenerator = random\ncount = 5\n", "v.ini")
    assert main(["analyze", "--config", str(bad_variant), "--out", str(tmp_path / "x")]) == EXIT_USAGE
    missing = tmp_path / "nope.ini"
    assert main(["analyze", "--config", str(missing), "--out", str(tmp_path / "x")]) == EXIT_USAGE
    big = write_config(tmp_path, "[measure]\ngenerator = cascade\ndelta = 0.1\ngen_depth = 9\n", "big.ini")
    assert main(["generate", "--config", str(big), "--out", str(tmp_path / "x")]) == EXIT_COST
    broken = tmp_path / "broken.txt"
    broken.write_text("0.1 0.2\n0.3\n")
    bad_input = write_config(tmp_path, f"[measure]\ninput = {broken}\n", "bad.ini")
    assert main(["analyze", "--config", str(bad_input), "--out", str(tmp_path / "x")]) == EXIT_INPUT
    with pytest.raises(SystemExit) as info:
        main(["explode", "--config", str(bad_input)])
    assert info.value.code == 2


def test_threads_env_override(tmp_path, monkeypatch):
    cfg_path = write_config(tmp_path, "[run]\nparallelism = 2\n")
    cfg = load_config(cfg_path, "analyze", tmp_path)
    assert cfg.parallelism == 2
    monkeypatch.setenv("BETASCOPE_THREADS", "5")
    assert cfg.parallelism == 5
    monkeypatch.setenv("BETASCOPE_THREADS", "many")
    from betascope.cli import ConfigError
    with pytest.raises(ConfigError):
        cfg.parallelism
    # threads do not change results
    section = "generator = random\ncount = 60\nseed = 1"
    monkeypatch.setenv("BETASCOPE_THREADS", "1")
    _, a = analyze(tmp_path, section, "t1")
    monkeypatch.setenv("BETASCOPE_THREADS", "4")
    _, b = analyze(tmp_path, section, "t4")
    assert (a / "profiles.csv").read_bytes() == (b / "profiles.csv").read_bytes()


def test_module_entry_point(tmp_path):
    cfg = write_config(tmp_path, "[measure]\ngenerator = cantor\nlevel = 2\n")
    proc = subprocess.run([sys.executable, "-m", "betascope", "generate", "--config", str(cfg),
                           "--out", str(tmp_path / "m")], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "m" / "measure.txt").exists()
