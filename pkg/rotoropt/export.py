"""
Artifacts of a run: sample tables, checkpoints, histories, reports, fields and plots.

Every file written here is listed in the run manifest together with the
config hash; table files are additionally checked against the SHA-256 and
parameter fingerprint stored in the table index.
"""

import csv
import json
import logging
import os
from dataclasses import asdict

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import meshio  # noqa: E402
import numpy as np  # noqa: E402

from .elasticity import PsiTable  # noqa: E402
from .errors import RotorOptError, TableError  # noqa: E402
from .helpers import sha256_bytes  # noqa: E402
from .levelset import LevelSetField  # noqa: E402
from .mesh import MATERIAL_NAMES  # noqa: E402
from .td_engine import TDSampleTable  # noqa: E402

logger = logging.getLogger(__name__)

TABLE_INDEX = "tables.json"
PSI_FILE = "psi_table.npz"


def table_file(pair):
    return "td_" + pair.replace("->", "_to_") + ".npz"


def _file_digest(path):
    with open(path, "rb") as fh:
        return sha256_bytes(fh.read())


def _read_index(directory):
    path = os.path.join(directory, TABLE_INDEX)
    if not os.path.exists(path):
        return {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        logger.warning("table index %s unreadable (%s); tables will be rebuilt", path, exc)
        return {}


def _write_index(directory, index):
    with open(os.path.join(directory, TABLE_INDEX), "w", encoding="utf-8") as fh:
        json.dump(index, fh, indent=2, sort_keys=True)


def _register(directory, name, fingerprint):
    index = _read_index(directory)
    index[name] = {"sha256": _file_digest(os.path.join(directory, name)), "fingerprint": fingerprint}
    _write_index(directory, index)


def _checked_path(directory, name, fingerprint):
    path = os.path.join(directory, name)
    if not os.path.exists(path):
        raise TableError(f"table file {path} is missing")
    entry = _read_index(directory).get(name)
    if entry is None:
        raise TableError(f"table file {path} is not registered in {TABLE_INDEX}")
    if entry.get("sha256") != _file_digest(path):
        raise TableError(f"table file {path} fails its checksum")
    if entry.get("fingerprint") != fingerprint:
        raise TableError(f"table file {path} was built with different parameters")
    return path


def table_fingerprint(run):
    return {
        "laws": asdict(run.laws()),
        "radial_samples": run.radial_samples,
        "angular_samples": run.angular_samples,
        "b_max_t": run.b_max_t,
        "exterior_levels": [run.exterior_min_level, run.exterior_max_level],
    }


def psi_fingerprint(run):
    params = run.elastic_params()
    return {
        "ersatz_ratio": params.ersatz_ratio,
        "exponent": params.exponent,
        "psi_r_samples": run.psi_r_samples,
        "psi_stress_samples": run.psi_stress_samples,
        "psi_stress_range": run.psi_stress_range,
    }


def save_table(table, directory, fingerprint):
    os.makedirs(directory, exist_ok=True)
    name = table_file(table.pair)
    np.savez(os.path.join(directory, name), pair=np.array(table.pair), radii=table.radii,
             angles=table.angles, samples=table.samples)
    _register(directory, name, fingerprint)
    return os.path.join(directory, name)


def load_table(pair, directory, fingerprint):
    path = _checked_path(directory, table_file(pair), fingerprint)
    try:
        with np.load(path) as data:
            if str(data["pair"]) != pair:
                raise TableError(f"{path} holds table '{data['pair']}', expected '{pair}'")
            return TDSampleTable(pair, data["radii"], data["angles"], data["samples"])
    except (OSError, KeyError, ValueError) as exc:
        raise TableError(f"cannot read table {path}: {exc}") from exc


def load_tables(pairs, directory, fingerprint):
    return {pair: load_table(pair, directory, fingerprint) for pair in pairs}


def save_psi_table(table, directory, fingerprint):
    os.makedirs(directory, exist_ok=True)
    np.savez(os.path.join(directory, PSI_FILE), r_values=table.r_values, stresses=table.stresses,
             values=table.values, exponent=np.array(table.exponent))
    _register(directory, PSI_FILE, fingerprint)
    return os.path.join(directory, PSI_FILE)


def load_psi_table(directory, fingerprint):
    path = _checked_path(directory, PSI_FILE, fingerprint)
    try:
        with np.load(path) as data:
            return PsiTable(data["r_values"], data["stresses"], data["values"], int(data["exponent"]))
    except (OSError, KeyError, ValueError) as exc:
        raise TableError(f"cannot read Psi table {path}: {exc}") from exc


# -- run artifacts ------------------------------------------------------------------

class ArtifactWriter:
    """Writes the files of one run directory and keeps the manifest."""

    def __init__(self, directory, config_hash):
        self.directory = directory
        self.config_hash = config_hash
        self.files = []
        os.makedirs(directory, exist_ok=True)

    def path(self, *parts):
        path = os.path.join(self.directory, *parts)
        os.makedirs(os.path.dirname(path), exist_ok=True)
        self.files.append(os.path.relpath(path, self.directory))
        return path

    def checkpoint(self, iteration, psi):
        """Level-set values on the design nodes, one row per node led by its mesh node id."""
        path = self.path("checkpoints", f"psi_k{iteration:04d}.csv")
        columns = psi.values.shape[1]
        header = f"config_hash={self.config_hash}\nnode," + ",".join(f"psi{c}" for c in range(columns))
        rows = np.column_stack([psi.space.nodes, psi.values])
        np.savetxt(path, rows, delimiter=",", header=header, fmt=["%d"] + ["%.17g"] * columns)
        return path

    def history(self, history):
        path = self.path("history.csv")
        with open(path, "w", newline="", encoding="utf-8") as fh:
            fh.write(f"# config_hash={self.config_hash}\n")
            names = sorted({key for record in history.records for key in record.constraints})
            writer = csv.writer(fh)
            writer.writerow(["iteration", "trial", "objective", "volume", "step", "weight", "angle_deg",
                             "accepted"] + names)
            for r in history.records:
                writer.writerow([r.iteration, r.trial, repr(r.objective), repr(r.volume), repr(r.step),
                                 repr(r.weight), repr(float(np.degrees(r.angle))), int(r.accepted)]
                                + [repr(r.constraints[n]) if n in r.constraints else "" for n in names])
        return path

    def torques(self, alphas, torques):
        path = self.path("torque_positions.csv")
        with open(path, "w", newline="", encoding="utf-8") as fh:
            fh.write(f"# config_hash={self.config_hash}\n")
            writer = csv.writer(fh)
            writer.writerow(["position", "alpha_deg", "torque_nm"])
            for n, (alpha, torque) in enumerate(zip(alphas, torques)):
                writer.writerow([n, repr(float(np.degrees(alpha))), repr(float(torque))])
        return path

    def report(self, report, name="report.json"):
        path = self.path(name)
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(dict(report, config_hash=self.config_hash), fh, indent=2)
        return path

    def fields(self, problem, analysis, name="fields.vtk"):
        """Legacy ASCII VTK of the pole: materials, potential and |curl u| at the first position,
        eddy loss density, temperature and stress."""
        path = self.path(name)
        mesh = problem.mesh
        config = analysis.config
        cell_data = {"region": [mesh.labels.astype(np.int32)]}
        for k, material in enumerate(MATERIAL_NAMES):
            cell_data[f"chi_{material}"] = [config.fractions[:, k]]
        point_data = {"potential": analysis.state.u[0]}
        b = problem.magnetic.element_fields(analysis.state.u[0])
        cell_data["flux_density_t"] = [np.hypot(b[:, 0], b[:, 1])]
        if analysis.loss is not None:
            cell_data["eddy_loss_density_w_m3"] = [analysis.loss.density]
        if analysis.theta is not None:
            theta = np.full(mesh.n_nodes, np.nan)
            theta[problem.thermal.domain.parent_nodes] = analysis.theta.values
            point_data["temperature"] = theta
        if analysis.deformation is not None:
            vm = np.zeros(mesh.n_elements)
            vm[problem.elastic.mesh.parent_elements] = problem.elastic.von_mises_pa(analysis.deformation, config)
            cell_data["von_mises_pa"] = [vm]
        points = np.column_stack([mesh.points, np.zeros(mesh.n_nodes)])
        out = meshio.Mesh(points, [("triangle", mesh.triangles)], point_data=point_data, cell_data=cell_data)
        meshio.write(path, out, file_format="vtk", binary=False)
        return path

    def plot_history(self, history, name="history.png"):
        """J, optimality angle and volume against the iteration counter."""
        path = self.path(name)
        accepted = history.accepted
        k = [r.iteration for r in accepted]
        fig, axes = plt.subplots(3, 1, figsize=(6, 8), sharex=True)
        axes[0].plot(k, [r.objective for r in accepted], "o-")
        axes[0].set_ylabel("J")
        axes[1].plot(k, [np.degrees(r.angle) for r in accepted], "o-")
        axes[1].set_ylabel("theta (deg)")
        axes[2].plot(k, [r.volume for r in accepted], "o-")
        axes[2].set_ylabel("V (m^2)")
        axes[2].set_xlabel("iteration")
        fig.suptitle(f"config {self.config_hash[:12]}", fontsize=8)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
        return path

    def manifest(self):
        path = os.path.join(self.directory, "manifest.json")
        files = set(self.files)
        if os.path.exists(path):
            try:
                with open(path, "r", encoding="utf-8") as fh:
                    previous = json.load(fh)
                if previous.get("config_hash") == self.config_hash:
                    files.update(previous.get("files", []))
            except (OSError, json.JSONDecodeError):
                logger.warning("replacing unreadable manifest %s", path)
        with open(path, "w", encoding="utf-8") as fh:
            json.dump({"config_hash": self.config_hash, "files": sorted(files)}, fh, indent=2)
        return path


def read_checkpoint(path, space):
    try:
        rows = np.loadtxt(path, delimiter=",", ndmin=2)
    except (OSError, ValueError) as exc:
        raise RotorOptError(f"cannot read checkpoint {path}: {exc}") from exc
    if rows.shape[0] != space.n_nodes or rows.shape[1] < 2:
        raise RotorOptError(f"checkpoint {path} has {rows.shape[0]} rows, the design mesh {space.n_nodes} nodes")
    if not np.array_equal(rows[:, 0].astype(np.int64), space.nodes):
        raise RotorOptError(f"checkpoint {path} lists other node ids than the design mesh")
    return LevelSetField(rows[:, 1:], space).normalized()


def latest_checkpoint(directory):
    folder = os.path.join(directory, "checkpoints")
    if not os.path.isdir(folder):
        return None
    names = sorted(n for n in os.listdir(folder) if n.startswith("psi_k") and n.endswith(".csv"))
    return os.path.join(folder, names[-1]) if names else None
