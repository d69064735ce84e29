import pytest

from owsga.config import AnalysisConfig, load_config, read_sections
from owsga.exceptions import ConfigError

BASE = "outcome = y\ntreatment = z\ncovariates = a, b\nsubgroups = g\n"


def test_bare_file_reads_as_analysis(tmp_path):
    path = tmp_path / "c.ini"
    path.write_text(BASE + "seed = 4\ndata = d.csv\nthresholds = 0.1, 0.2\nstandardize = no\n")
    cfg = load_config(path)
    assert cfg.covariates == ("a", "b") and cfg.seed == 4
    assert cfg.data == str(tmp_path / "d.csv")
    assert cfg.thresholds == (0.1, 0.2)
    assert cfg.standardize is False
    assert cfg.tilting == "ow" and cfg.ps_model == "post-lasso"


def test_seed_is_required(tmp_path):
    path = tmp_path / "c.ini"
    path.write_text(BASE)
    with pytest.raises(ConfigError, match="seed"):
        load_config(path)


@pytest.mark.parametrize("line", ["tilting = trim", "ps_model = forest", "variance = jackknife",
                                  "cv_folds = 1", "clip_propensity = 0.7", "seed = abc",
                                  "ps_model = external", "thresholds = 0.2, 0.1"])
def test_invalid_values(tmp_path, line):
    path = tmp_path / "c.ini"
    path.write_text(BASE + "seed = 1\n" + line + "\n")
    with pytest.raises(ConfigError):
        load_config(path)


def test_sections_and_snapshot(tmp_path):
    path = tmp_path / "c.ini"
    path.write_text("[analysis]\n" + BASE + "seed = 2  # comment\nnote = kept\n")
    assert read_sections(path)["analysis"]["seed"] == "2"
    cfg = load_config(path)
    assert cfg.extra == {"note": "kept"}
    snap = cfg.snapshot()
    assert snap["covariates"] == ["a", "b"] and "extra" not in snap


def test_replace_revalidates():
    cfg = AnalysisConfig(outcome="y", treatment="z", covariates=("a",), subgroups=(), seed=1)
    assert cfg.replace(tilting="ipw").tilting == "ipw"
    with pytest.raises(ConfigError):
        cfg.replace(ci_level=2.0)


@pytest.mark.parametrize("header", ["", "[analysis]\n"])
def test_leading_comments_before_header(tmp_path, header):
    path = tmp_path / "c.ini"
    path.write_text("# study config\n; second comment\n\n" + header + BASE + "seed = 3\n")
    assert load_config(path).seed == 3
