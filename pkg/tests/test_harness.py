import json

import numpy as np
import pytest

from piezoctrl.cli import main
from piezoctrl.harness import (
    ConfigError,
    DIRICHLET_RULES,
    RunConfig,
    build_operators,
    check_assembly_oracle,
    check_energy_conservation,
    check_qp_oracle,
    export_trajectory,
    make_config,
    parse_config_file,
    random_smooth_control,
    run_verification,
    side_integrals,
    write_control_csv,
)
from piezoctrl.mesh import build_cube_mesh
from piezoctrl.timestepper import control_metric, solve_state


# ---------------------------------------------------------------------------
# configuration


def test_parse_config_file(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text(
        "# comment\n"
        "experiment = control\n"
        "mesh_m = 3\n"
        "alpha = 1e-3   # inline comment\n"
        "mesh_levels = 1,2\n"
        "full_scale = true\n"
    )
    cfg = make_config(parse_config_file(path))
    assert cfg.experiment == "control"
    assert cfg.mesh_m == 3
    assert cfg.alpha == 1e-3
    assert cfg.mesh_levels == (1, 2)
    assert cfg.full_scale is True


def test_unknown_key_rejected():
    with pytest.raises(ConfigError):
        make_config({"no_such_key": "1"})


def test_bad_value_rejected():
    with pytest.raises(ConfigError):
        make_config({"mesh_m": "three"})


def test_nonpositive_final_time_rejected():
    with pytest.raises(ConfigError):
        make_config({"t_final": "-1.0"})


def test_refinement_rule():
    cfg = RunConfig(n0_steps=8)
    assert cfg.n_steps_for(3) == 24


def test_malformed_line(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("just words\n")
    with pytest.raises(ConfigError):
        parse_config_file(path)


# ---------------------------------------------------------------------------
# CLI


def test_cli_config_error_exit_code(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("bogus_key = 3\n")
    assert main(["verify", "--config", str(cfg)]) == 2


def test_cli_missing_config_file():
    assert main(["verify", "--config", "/nonexistent/file.cfg"]) == 2


def test_cli_verification_failure_exit_code(tmp_path):
    # fault injection breaks the adjoint coupling and must be caught
    cfg = tmp_path / "fault.cfg"
    cfg.write_text("fault_injection = true\n")
    code = main(
        ["verify", "--config", str(cfg), "--out", str(tmp_path / "out")]
    )
    assert code == 1
    report = json.loads(
        (tmp_path / "out" / "verification" / "report.json").read_text()
    )
    assert not report["passed"]
    names = {c["name"]: c["passed"] for c in report["checks"]}
    assert not names["transposition_order"]
    assert names["assembly_oracle"]


# ---------------------------------------------------------------------------
# verification checks


def test_assembly_oracle_check():
    assert check_assembly_oracle()["passed"]


def test_energy_conservation_check():
    result = check_energy_conservation()
    assert result["passed"], result


def test_qp_oracle_check():
    result = check_qp_oracle()
    assert result["passed"], result


# ---------------------------------------------------------------------------
# outputs


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    mesh = build_cube_mesh(1, DIRICHLET_RULES["bottom"])
    ops = build_operators(mesh, 2)
    metric = control_metric(ops, 4, 1.0)
    rng = np.random.default_rng(3)
    z = random_smooth_control(metric, rng)
    traj = solve_state(ops, control=z, n_steps=4, t_final=1.0)
    return mesh, ops, z, traj


def test_export_trajectory_vtk_and_csv(tmp_path, small_run):
    mesh, ops, z, traj = small_run
    files = export_trajectory(traj, tmp_path, basename="probe")
    assert len(files) == 5
    text = open(files[0]).read().splitlines()
    assert text[0].startswith("# vtk DataFile")
    assert "ASCII" in text[2]
    assert text[3] == "DATASET UNSTRUCTURED_GRID"
    npoints = int(text[4].split()[1])
    assert npoints == mesh.n_vertices
    assert any(line.startswith("CELL_TYPES") for line in text)
    csv = open(tmp_path / "probe_series.csv").read().splitlines()
    assert csv[0] == "t_n,energy,u_norm_rho"
    assert len(csv) == 6


def test_vtk_counts_consistent(tmp_path, small_run):
    mesh, ops, z, traj = small_run
    files = export_trajectory(traj, tmp_path, basename="count")
    lines = open(files[-1]).read().splitlines()
    icells = next(i for i, l in enumerate(lines) if l.startswith("CELLS"))
    ncells, nints = (int(s) for s in lines[icells].split()[1:])
    assert ncells == mesh.n_tets
    assert nints == 5 * mesh.n_tets
    for line in lines[icells + 1 : icells + 1 + ncells]:
        parts = line.split()
        assert parts[0] == "4"
        assert all(0 <= int(p) < mesh.n_vertices for p in parts[1:])
    itypes = lines.index(f"CELL_TYPES {ncells}")
    assert set(lines[itypes + 1 : itypes + 1 + ncells]) == {"10"}


def test_control_csv_roundtrip(tmp_path, small_run):
    mesh, ops, z, traj = small_run
    path = tmp_path / "control.csv"
    write_control_csv(z, path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "n,t_n,face_id,value"
    assert len(lines) == 1 + z.values.size
    n, t, f, v = lines[1 + ops.n_faces].split(",")
    assert int(n) == 1
    assert abs(float(t) - 0.25) < 1e-12
    assert abs(float(v) - z.values[1, int(f)]) < 1e-12


def test_side_integrals_shape_and_mean(small_run):
    mesh, ops, z, traj = small_run
    sides = side_integrals(mesh, z)
    assert sides.shape == (5, 6)
    # zero boundary mean makes the six side integrals sum to zero
    assert np.abs(sides.sum(axis=1)).max() < 1e-12 * (1 + np.abs(z.values).max())


def test_run_verification_report(tmp_path):
    cfg = make_config({"experiment": "verify", "outdir": str(tmp_path)})
    report = run_verification(cfg)
    assert report["passed"]
    data = json.loads((tmp_path / "verification" / "report.json").read_text())
    assert {c["name"] for c in data["checks"]} == {
        "assembly_oracle",
        "energy_conservation",
        "transposition_order",
        "fd_gradient",
        "qp_oracle",
    }


# ---------------------------------------------------------------------------
# plots, CLI experiment paths, mesh files through the config


def test_svg_chart_writer(tmp_path):
    from piezoctrl.svgplot import write_line_chart

    path = tmp_path / "chart.svg"
    write_line_chart(
        path,
        [("a", [1, 0.5, 0.25], [1e-1, 2e-2, 5e-3]), ("b", [1, 0.5], [3e-1, 1e-1])],
        title="t",
        xlabel="h",
        ylabel="err",
        logx=True,
        logy=True,
    )
    text = path.read_text()
    assert text.startswith("<svg")
    assert text.count("<polyline") == 2
    assert text.rstrip().endswith("</svg>")
    with pytest.raises(ValueError):
        write_line_chart(tmp_path / "e.svg", [("x", [1.0], [-1.0])], logy=True)


def test_cli_convergence_smoke(tmp_path):
    cfg = tmp_path / "conv.cfg"
    cfg.write_text("mesh_levels = 1,2\nn0_steps = 4\n")
    code = main(
        ["convergence", "--config", str(cfg), "--out", str(tmp_path / "o")]
    )
    assert code == 0
    out = tmp_path / "o" / "convergence"
    assert (out / "errors.csv").exists()
    assert (out / "rates.csv").exists()
    assert (out / "errors.svg").exists()
    header = (out / "errors.csv").read_text().splitlines()[0]
    assert header == "M,h,u_l2,u_h1,psi_l2,psi_h1"


def test_cli_control_smoke(tmp_path):
    cfg = tmp_path / "ctrl.cfg"
    cfg.write_text("mesh_levels = 1,2\nn0_steps = 4\nmax_iters = 6\ntol = 1e-4\n")
    code = main(["control", "--config", str(cfg), "--out", str(tmp_path / "o")])
    assert code == 0
    out = tmp_path / "o" / "control"
    for name in (
        "eps.csv",
        "iterations.csv",
        "control_M1.csv",
        "side_integrals_M2.csv",
        "trace_M1.csv",
        "side_gaps.csv",
        "eps.svg",
        "side_z1.svg",
    ):
        assert (out / name).exists(), name


def test_mesh_file_through_config(tmp_path):
    from piezoctrl.harness import build_mesh

    mesh = build_cube_mesh(1, DIRICHLET_RULES["bottom"])
    path = tmp_path / "cube.msh"
    with open(path, "w") as fh:
        fh.write(f"{mesh.n_vertices} {mesh.n_tets} {mesh.n_boundary_faces}\n")
        for p in mesh.vertices:
            fh.write(f"{p[0]} {p[1]} {p[2]}\n")
        for t in mesh.tets:
            fh.write(" ".join(str(v) for v in t) + "\n")
        for tri, tag in zip(mesh.boundary_faces, mesh.face_tags):
            fh.write(" ".join(str(v) for v in tri) + f" {tag}\n")
    tag_map = ",".join(
        [f"{t}:D" for t in mesh.dirichlet_tags]
        + [f"{t}:N" for t in mesh.neumann_tags]
    )
    cfg = make_config({"mesh_file": str(path), "mesh_tag_map": tag_map})
    loaded = build_mesh(cfg)
    assert loaded.n_tets == mesh.n_tets
    assert loaded.dirichlet_tags == mesh.dirichlet_tags
