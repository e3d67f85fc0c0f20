"""JSON and CSV persistence for systems, targets, certificates and trajectories."""
import json
import logging
from pathlib import Path
from typing import Any

import numpy as np

from darklab.core.analysis import DarkModeCertificate, Residuals
from darklab.core.simulator import PiecewiseDrive, Trajectory
from darklab.core.synthesis import SynthesisTarget
from darklab.core.system import KernelSpec, SystemSpec, build_v, kernel_from_dict
from darklab.errors import CertificateFormatError, DarklabError, DimensionMismatch, SpecFormatError
from darklab.services.environment import get_settings

logger = logging.getLogger(__name__)

CSV_FORMAT = "%.17g"


def _matrix(data: dict, key: str, error: type[DarklabError] = SpecFormatError) -> np.ndarray:
    """A required real matrix field; ragged or non-numeric input names the field."""
    if key not in data:
        raise error(f"missing field {key!r}")
    try:
        matrix = np.array(data[key], dtype=float)
    except (TypeError, ValueError) as e:
        raise error(f"field {key!r} is not a numeric matrix: {e}") from e
    if matrix.ndim == 1 and matrix.size == 0:
        return matrix.reshape(0, 0)
    if matrix.ndim != 2:
        raise error(f"field {key!r} must be a matrix, got {matrix.ndim} dimensions")
    return matrix


def _integer(data: dict, key: str) -> int:
    if key not in data:
        raise SpecFormatError(f"missing field {key!r}")
    value = data[key]
    if isinstance(value, bool) or not isinstance(value, int):
        raise SpecFormatError(f"field {key!r} must be an integer, got {value!r}")
    return value


def _read_json(path: str | Path, error: type[DarklabError]) -> dict:
    try:
        with open(path, encoding="utf-8") as f:
            data = json.load(f)
    except FileNotFoundError as e:
        raise error(f"{path}: file not found") from e
    except json.JSONDecodeError as e:
        raise error(f"{path}: invalid JSON ({e})") from e
    if not isinstance(data, dict):
        raise error(f"{path}: expected a JSON object at top level")
    return data


def _to_jsonable(value: Any) -> Any:
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, dict):
        return {key: _to_jsonable(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [_to_jsonable(item) for item in value]
    return value


class SpecStore:
    """Readers and writers for the file formats shared by all commands."""

    # ==================== SYSTEM SPECS ====================

    @staticmethod
    def parse_coupling(data: dict) -> tuple[np.ndarray, np.ndarray | None]:
        """V and, when given, the complex coupling vectors of a spec document.

        An explicit V is kept next to the vectors so that SystemSpec can check they agree.
        """
        coupling = data.get("coupling")
        if not isinstance(coupling, dict):
            raise SpecFormatError("field 'coupling' must be an object with 'complex_vectors' or 'V'")
        if "complex_vectors" in coupling:
            try:
                pairs = np.array(coupling["complex_vectors"], dtype=float)
            except (TypeError, ValueError) as e:
                raise SpecFormatError(f"field 'coupling.complex_vectors' is not numeric: {e}") from e
            if pairs.ndim != 3 or pairs.shape[2] != 2:
                raise SpecFormatError("'coupling.complex_vectors' must be M lists of [re, im] pairs")
            vectors = pairs[..., 0] + 1j * pairs[..., 1]
            if "V" in coupling:
                return _matrix(coupling, "V"), vectors
            return build_v(vectors), vectors
        if "V" in coupling:
            return _matrix(coupling, "V"), None
        raise SpecFormatError("field 'coupling' needs 'complex_vectors' or 'V'")

    @staticmethod
    def parse_kernels(data: dict) -> list[KernelSpec]:
        kernels = data.get("kernels")
        if not isinstance(kernels, list):
            raise SpecFormatError("field 'kernels' must be a list")
        for index, kernel in enumerate(kernels):
            if not isinstance(kernel, dict):
                raise SpecFormatError(f"kernels[{index}] must be an object")
        return [kernel_from_dict(kernel) for kernel in kernels]

    @staticmethod
    def system_from_dict(data: dict) -> SystemSpec:
        """Build a SystemSpec from its JSON document.

        Raises:
            SpecFormatError: for missing or non-numeric fields.
            KernelError: for unusable kernels.
            DimensionMismatch: when the arrays disagree with n and M.
        """
        n = _integer(data, "n")
        m = _integer(data, "M")
        omega = _matrix(data, "omega")
        v, vectors = SpecStore.parse_coupling(data)
        kernels = SpecStore.parse_kernels(data)
        tol = data.get("tol")
        if tol is not None and (isinstance(tol, bool) or not isinstance(tol, (int, float)) or not tol > 0):
            raise SpecFormatError(f"field 'tol' must be a positive number, got {tol!r}")
        return SystemSpec(
            n=n,
            m=m,
            omega=omega,
            v=v,
            kernels=tuple(kernels),
            tol=None if tol is None else float(tol),
            coupling_vectors=vectors,
        )

    @staticmethod
    def system_to_dict(spec: SystemSpec) -> dict:
        if spec.coupling_vectors is not None:
            coupling = {
                "complex_vectors": [
                    [[float(z.real), float(z.imag)] for z in vector] for vector in spec.coupling_vectors
                ]
            }
        else:
            coupling = {"V": spec.v.tolist()}
        data = {
            "n": spec.n,
            "M": spec.m,
            "omega": spec.omega.tolist(),
            "coupling": coupling,
            "kernels": [kernel.to_dict() for kernel in spec.kernels],
        }
        if spec.tol is not None:
            data["tol"] = spec.tol
        return data

    @staticmethod
    def load_system(path: str | Path) -> SystemSpec:
        return SpecStore.system_from_dict(_read_json(path, SpecFormatError))

    @staticmethod
    def save_system(spec: SystemSpec, path: str | Path) -> None:
        SpecStore.save_json(SpecStore.system_to_dict(spec), path)

    @staticmethod
    def load_coupling(path: str | Path) -> tuple[np.ndarray, list[KernelSpec]]:
        """V and kernels from a system document; 'omega' is ignored if present."""
        data = _read_json(path, SpecFormatError)
        v, vectors = SpecStore.parse_coupling(data)
        if vectors is not None:
            built = build_v(vectors)
            if built.shape != v.shape or np.linalg.norm(built - v) > get_settings().tol:
                raise DimensionMismatch("coupling.complex_vectors and coupling.V disagree")
        return v, SpecStore.parse_kernels(data)

    # ==================== SYNTHESIS TARGETS ====================

    @staticmethod
    def load_target(path: str | Path) -> SynthesisTarget:
        """Target document {"omega_dark": ..., "mu": [...], "alpha": [[...]]}.

        ``alpha`` lists one free direction per row.
        """
        data = _read_json(path, SpecFormatError)
        omega_dark = _matrix(data, "omega_dark")
        mu = data.get("mu")
        if mu is not None:
            try:
                mu = np.array(mu, dtype=float).ravel()
            except (TypeError, ValueError) as e:
                raise SpecFormatError(f"field 'mu' is not numeric: {e}") from e
        alpha = _matrix(data, "alpha").T if "alpha" in data else None
        return SynthesisTarget(omega_dark=omega_dark, free_spectrum=mu, free_directions=alpha)

    # ==================== CERTIFICATES ====================

    @staticmethod
    def certificate_to_dict(cert: DarkModeCertificate) -> dict:
        return {
            "s_d": cert.s_d.tolist(),
            "s_b": cert.s_b.tolist(),
            "a_d": cert.a_d.tolist(),
            "residuals": {key: float(value) for key, value in cert.residuals.items()},
            "tol": cert.tol,
            "t1": cert.t1,
            "verified": cert.verified,
        }

    @staticmethod
    def load_certificate(path: str | Path) -> DarkModeCertificate:
        """Read a certificate; stored residuals are kept but never trusted by callers.

        Raises:
            CertificateFormatError: for unreadable files and missing or malformed fields.
        """
        data = _read_json(path, CertificateFormatError)
        s_d = _matrix(data, "s_d", CertificateFormatError)
        if s_d.size == 0 or s_d.shape[0] % 2:
            raise CertificateFormatError(f"'s_d' must have an even, nonzero number of rows, got {s_d.shape}")
        s_b = _matrix(data, "s_b", CertificateFormatError) if "s_b" in data else np.zeros((0, s_d.shape[1]))
        if s_b.size == 0:
            s_b = np.zeros((0, s_d.shape[1]))
        a_d = _matrix(data, "a_d", CertificateFormatError) if "a_d" in data else np.zeros((0, 0))
        try:
            residuals = {key: float(value) for key, value in data.get("residuals", {}).items()}
            tol = float(data["tol"]) if "tol" in data else None
            t1 = float(data.get("t1", 0.0))
        except (AttributeError, TypeError, ValueError) as e:
            raise CertificateFormatError(f"certificate scalars are malformed: {e}") from e
        if t1 < 0:
            raise CertificateFormatError(f"'t1' must be nonnegative, got {t1}")
        missing = [key for key in Residuals.__annotations__ if key not in residuals]
        for key in missing:
            residuals[key] = float("inf")
        return DarkModeCertificate(
            s_d=s_d,
            s_b=s_b,
            a_d=a_d,
            residuals=residuals,
            tol=tol if tol is not None else get_settings().tol,
            t1=t1,
        )

    @staticmethod
    def save_certificate(cert: DarkModeCertificate, path: str | Path) -> None:
        SpecStore.save_json(SpecStore.certificate_to_dict(cert), path)

    # ==================== TRAJECTORIES AND TABLES ====================

    @staticmethod
    def save_trajectory(trajectory: Trajectory, path: str | Path) -> None:
        """CSV with header t,x_1..x_2n,y_1..y_2M and 17 significant digits."""
        size = trajectory.states.shape[1]
        width = trajectory.outputs.shape[1]
        header = ",".join(["t"] + [f"x_{i}" for i in range(1, size + 1)] + [f"y_{i}" for i in range(1, width + 1)])
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        table = np.column_stack([trajectory.times, trajectory.states, trajectory.outputs])
        np.savetxt(path, table, fmt=CSV_FORMAT, delimiter=",", header=header, comments="")
        logger.info("wrote %s rows to %s", table.shape[0], path)

    @staticmethod
    def load_table(path: str | Path) -> tuple[list[str], np.ndarray]:
        """Header names (empty if absent) and the numeric rows of a CSV file."""
        try:
            with open(path, encoding="utf-8") as f:
                first = f.readline()
        except FileNotFoundError as e:
            raise SpecFormatError(f"{path}: file not found") from e
        names = [name.strip() for name in first.split(",")]
        try:
            [float(name) for name in names]
            header: list[str] = []
        except ValueError:
            header = names
        try:
            table = np.loadtxt(path, delimiter=",", skiprows=1 if header else 0, ndmin=2)
        except ValueError as e:
            raise SpecFormatError(f"{path}: non-numeric table entry ({e})") from e
        return header, table

    @staticmethod
    def load_drive_table(path: str | Path) -> PiecewiseDrive:
        """Drive table: first column t, then one column per input quadrature."""
        _, table = SpecStore.load_table(path)
        if table.shape[1] < 2:
            raise SpecFormatError(f"{path}: drive table needs a time column and at least one input column")
        return PiecewiseDrive(times=table[:, 0], values=table[:, 1:])

    # ==================== REPORTS ====================

    @staticmethod
    def jsonable(data: Any) -> Any:
        """``data`` with arrays and numpy scalars turned into plain Python values."""
        return _to_jsonable(data)

    @staticmethod
    def save_json(data: dict, path: str | Path) -> None:
        """Write ``data`` with stable key order; floats keep their shortest exact repr."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(_to_jsonable(data), f, indent=2)
            f.write("\n")
        logger.info("wrote %s", path)
