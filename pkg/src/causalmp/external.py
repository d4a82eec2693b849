"""Adapter for out-of-process predictive backends.

The wire protocol is line-delimited JSON over the child's stdin/stdout.
Record kinds sent by the host:

* ``{"kind": "hello", "version": "1"}``  -> client echoes kind and version
* ``{"kind": "fit", "rows": [[x..., a, y], ...]}``  -> ``{"kind": "ok"}``
* ``{"kind": "query_cdf", "id": i, "x": [...], "a": 0|1, "y_grid": [...]}``
  -> ``{"kind": "cdf", "id": i, "values": [...]}``
* ``{"kind": "query_prob", "id": i, "x": [...]}``
  -> ``{"kind": "prob", "id": i, "values": [p]}``
* ``{"kind": "absorb", "x": [...], "a": 0|1, "y": float|null}`` -> ``{"kind": "ok"}``
  (``y`` null updates the treatment model only)
* ``{"kind": "bye"}``  -> client answers ``{"kind": "bye"}`` and exits 0

Client-reported failures come back as ``{"kind": "error", "id": ..., "code":
..., "message": ...}``.  Every query response must echo the request id;
anything malformed aborts the call with a protocol error rather than
defaulting silently.  Floats are carried at full JSON precision; cross
implementation agreement is only promised to 1e-6.

Re-sending ``fit`` replaces the client's training state, which is how a
fresh chain of absorb updates is started.
"""

from __future__ import annotations

import json
import queue
import subprocess
import threading
from dataclasses import dataclass, field

import numpy as np

from .data import CausalDataset, child_rng
from .ppd import OutcomePredictive, PropensityPredictive

PROTOCOL_VERSION = "1"


class TransportError(RuntimeError):
    """Child process unavailable: spawn failure, death, or timeout."""


class ProtocolError(RuntimeError):
    """Child responded, but not with a well-formed matching record."""


class VersionMismatchError(ProtocolError):
    pass


class ExternalSession:
    """One child process speaking the line protocol; requests serialized."""

    def __init__(self, command, env=None, timeout: float = 30.0):
        self.timeout = timeout
        try:
            self._proc = subprocess.Popen(
                command,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.DEVNULL,
                env=env,
                text=True,
                bufsize=1,
            )
        except OSError as exc:
            raise TransportError(f"failed to spawn {command!r}: {exc}") from exc
        self._lines: queue.Queue = queue.Queue()
        self._reader = threading.Thread(target=self._pump, daemon=True)
        self._reader.start()
        self._lock = threading.Lock()
        self._next_id = 0

    def _pump(self):
        try:
            for line in self._proc.stdout:
                self._lines.put(line)
        finally:
            self._lines.put(None)

    def send(self, record: dict) -> None:
        try:
            self._proc.stdin.write(json.dumps(record) + "\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise TransportError(f"child closed its input: {exc}") from exc

    def recv(self) -> dict:
        try:
            line = self._lines.get(timeout=self.timeout)
        except queue.Empty:
            raise TransportError(f"no response within {self.timeout}s") from None
        if line is None:
            raise TransportError("child closed its output")
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ProtocolError(f"malformed response line: {line!r}") from exc
        if not isinstance(record, dict) or "kind" not in record:
            raise ProtocolError(f"response is not a keyed record: {record!r}")
        return record

    def roundtrip(self, record: dict) -> dict:
        with self._lock:
            self.send(record)
            response = self.recv()
        if response.get("kind") == "error":
            raise ProtocolError(
                f"client error {response.get('code')!r}: {response.get('message')}"
            )
        return response

    def query(self, record: dict, expect_kind: str) -> np.ndarray:
        with self._lock:
            request_id = self._next_id
            self._next_id += 1
            record = dict(record, id=request_id)
            self.send(record)
            response = self.recv()
        if response.get("kind") == "error":
            raise ProtocolError(
                f"client error {response.get('code')!r}: {response.get('message')}"
            )
        if response.get("kind") != expect_kind:
            raise ProtocolError(
                f"expected kind {expect_kind!r}, got {response.get('kind')!r}"
            )
        if response.get("id") != request_id:
            raise ProtocolError(
                f"response id {response.get('id')!r} does not match request {request_id}"
            )
        values = response.get("values")
        if not isinstance(values, list):
            raise ProtocolError("response carries no float array")
        return np.asarray(values, dtype=np.float64)

    def close(self) -> int:
        try:
            self.send({"kind": "bye"})
        except TransportError:
            pass
        try:
            return self._proc.wait(timeout=self.timeout)
        except subprocess.TimeoutExpired:
            self._proc.kill()
            return self._proc.wait()


@dataclass
class ExternalBackend:
    """Handle to a fitted external predictive process.

    Unlike the analytic backends, absorb advances remote state in place; a
    fresh chain is started by re-fitting.  Parallel draws therefore need one
    process per worker.
    """

    session: ExternalSession
    version: str
    fitted: bool = False
    _probe_cache: dict = field(default_factory=dict)

    def fit(self, dataset: CausalDataset) -> None:
        rows = np.column_stack(
            [dataset.covariates, dataset.treatments.astype(np.float64), dataset.outcomes]
        )
        response = self.session.roundtrip({"kind": "fit", "rows": rows.tolist()})
        if response.get("kind") != "ok":
            raise ProtocolError(f"fit not acknowledged: {response!r}")
        self.fitted = True
        self._probe_cache.clear()

    def outcome(self) -> "ExternalOutcome":
        return ExternalOutcome(self)

    def propensity(self) -> "ExternalPropensity":
        return ExternalPropensity(self)

    def close(self) -> int:
        return self.session.close()

    # --- raw queries -----------------------------------------------------
    def cdf_values(self, x: np.ndarray, a: int, y_grid: np.ndarray) -> np.ndarray:
        values = self.session.query(
            {
                "kind": "query_cdf",
                "x": np.asarray(x, dtype=np.float64).tolist(),
                "a": int(a),
                "y_grid": np.asarray(y_grid, dtype=np.float64).tolist(),
            },
            expect_kind="cdf",
        )
        if len(values) != len(y_grid):
            raise ProtocolError("cdf array length does not match the query grid")
        return values

    def prob_value(self, x: np.ndarray) -> float:
        values = self.session.query(
            {"kind": "query_prob", "x": np.asarray(x, dtype=np.float64).tolist()},
            expect_kind="prob",
        )
        if len(values) != 1:
            raise ProtocolError("prob response must carry exactly one value")
        return float(values[0])

    def absorb(self, x: np.ndarray, a: int, y: float | None) -> None:
        response = self.session.roundtrip(
            {
                "kind": "absorb",
                "x": np.asarray(x, dtype=np.float64).tolist(),
                "a": int(a),
                "y": None if y is None else float(y),
            }
        )
        if response.get("kind") != "ok":
            raise ProtocolError(f"absorb not acknowledged: {response!r}")
        self._probe_cache.clear()

    def support_probe(self, x: np.ndarray, a: int, points: int = 513) -> tuple[np.ndarray, np.ndarray]:
        """Wide CDF probe used for quantiles, densities, moments, sampling.

        The returned grid CDF is treated as authoritative and interpolated
        linearly between knots.
        """
        key = (a, tuple(np.round(np.asarray(x, dtype=np.float64), 12)))
        if key in self._probe_cache:
            return self._probe_cache[key]
        lo, hi = -8.0, 8.0
        for _ in range(60):
            grid = np.array([lo, hi])
            f = self.cdf_values(x, a, grid)
            if f[0] < 5e-4 and f[1] > 1.0 - 5e-4:
                break
            if f[0] >= 5e-4:
                lo = lo * 2.0 if lo < 0 else lo - (hi - lo)
            if f[1] <= 1.0 - 5e-4:
                hi = hi * 2.0 if hi > 0 else hi + (hi - lo)
        grid = np.linspace(lo, hi, points)
        cdf = np.maximum.accumulate(np.clip(self.cdf_values(x, a, grid), 0.0, 1.0))
        self._probe_cache[key] = (grid, cdf)
        return grid, cdf


class ExternalOutcome(OutcomePredictive):
    """Grid-CDF view of the external process as an outcome predictive."""

    def __init__(self, backend: ExternalBackend):
        self._backend = backend

    def _require_fitted(self):
        if not self._backend.fitted:
            raise ProtocolError("backend queried before fit")

    def predictive_cdf(self, y, x, a):
        self._require_fitted()
        return float(self._backend.cdf_values(x, a, np.array([y]))[0])

    def predictive_density(self, y, x, a):
        self._require_fitted()
        grid, cdf = self._backend.support_probe(x, a)
        h = (grid[-1] - grid[0]) / (len(grid) - 1)
        f_hi = np.interp(y + h, grid, cdf)
        f_lo = np.interp(y - h, grid, cdf)
        return float(max(f_hi - f_lo, 0.0) / (2.0 * h))

    def posterior_mean(self, x, a):
        self._require_fitted()
        grid, cdf = self._backend.support_probe(x, a)
        mids = 0.5 * (grid[1:] + grid[:-1])
        return float(np.sum(mids * np.diff(cdf)) / max(cdf[-1] - cdf[0], 1e-12))

    def sample_outcome(self, x, a, rng):
        self._require_fitted()
        grid, cdf = self._backend.support_probe(x, a)
        u = rng.uniform(cdf[0] + 1e-9, cdf[-1] - 1e-9)
        return float(np.interp(u, cdf, grid))

    def absorb(self, x, a, y):
        self._require_fitted()
        self._backend.absorb(x, a, float(y))
        return self

    def cdf_grid(self, points, a, grid):
        self._require_fitted()
        points = np.atleast_2d(points)
        out = np.empty_like(grid, dtype=np.float64)
        for i in range(points.shape[0]):
            out[i] = self._backend.cdf_values(points[i], a, grid[i])
        return out

    def density_grid(self, points, a, grid):
        self._require_fitted()
        points = np.atleast_2d(points)
        out = np.empty_like(grid, dtype=np.float64)
        for i in range(points.shape[0]):
            probe_grid, probe_cdf = self._backend.support_probe(points[i], a)
            h = (probe_grid[-1] - probe_grid[0]) / (len(probe_grid) - 1)
            f_hi = np.interp(grid[i] + h, probe_grid, probe_cdf)
            f_lo = np.interp(grid[i] - h, probe_grid, probe_cdf)
            out[i] = np.maximum(f_hi - f_lo, 0.0) / (2.0 * h)
        return out

    def posterior_mean_at(self, points, a):
        points = np.atleast_2d(points)
        return np.array([self.posterior_mean(points[i], a) for i in range(points.shape[0])])

    def quantile_band(self, points, a, lo, hi):
        self._require_fitted()
        points = np.atleast_2d(points)
        q_lo = np.empty(points.shape[0])
        q_hi = np.empty(points.shape[0])
        for i in range(points.shape[0]):
            grid, cdf = self._backend.support_probe(points[i], a)
            q_lo[i] = np.interp(lo, cdf, grid)
            q_hi[i] = np.interp(hi, cdf, grid)
        return q_lo, q_hi


class ExternalPropensity(PropensityPredictive):
    def __init__(self, backend: ExternalBackend):
        self._backend = backend

    def predictive_prob(self, x):
        if not self._backend.fitted:
            raise ProtocolError("backend queried before fit")
        return self._backend.prob_value(x)

    def absorb(self, x, a):
        self._backend.absorb(x, int(a), None)
        return self


def external_handshake(command, env=None, timeout: float = 30.0) -> ExternalBackend:
    """Spawn the client and negotiate the protocol version."""
    session = ExternalSession(command, env=env, timeout=timeout)
    response = session.roundtrip({"kind": "hello", "version": PROTOCOL_VERSION})
    if response.get("kind") != "hello":
        session.close()
        raise ProtocolError(f"expected hello, got {response!r}")
    version = response.get("version")
    if version != PROTOCOL_VERSION:
        session.close()
        raise VersionMismatchError(
            f"client speaks version {version!r}, host requires {PROTOCOL_VERSION!r}"
        )
    return ExternalBackend(session=session, version=str(version))


@dataclass(frozen=True)
class ProtocolCheckReport:
    handshake_ok: bool
    monotone_ok: bool
    roundtrip_ok: bool
    exit_ok: bool
    details: tuple[str, ...]

    @property
    def passed(self) -> bool:
        return self.handshake_ok and self.monotone_ok and self.roundtrip_ok and self.exit_ok


def run_protocol_check(command, env=None, timeout: float = 30.0) -> ProtocolCheckReport:
    """Conformance suites against a client: handshake, monotone CDF, float
    round-trip agreement, clean shutdown."""
    details: list[str] = []
    backend = external_handshake(command, env=env, timeout=timeout)
    handshake_ok = True
    details.append(f"handshake: version {backend.version}")

    rng = child_rng(20250801)
    n, d = 48, 3
    x = rng.standard_normal((n, d))
    a = (rng.random(n) < 0.5).astype(np.float64)
    y = x @ np.array([1.0, -0.5, 0.25]) + a * 1.5 + 0.5 * rng.standard_normal(n)
    rows = np.column_stack([x, a, y])
    backend.session.roundtrip({"kind": "fit", "rows": rows.tolist()})
    backend.fitted = True

    monotone_ok = True
    grid = np.linspace(-12.0, 12.0, 65)
    probes = x[:4]
    for arm in (0, 1):
        for i in range(probes.shape[0]):
            values = backend.cdf_values(probes[i], arm, grid)
            if np.any(np.diff(values) < -1e-9):
                monotone_ok = False
                details.append(f"monotonicity violated at probe {i}, arm {arm}")
            if values.min() < -1e-6 or values.max() > 1.0 + 1e-6:
                monotone_ok = False
                details.append(f"cdf out of [0,1] at probe {i}, arm {arm}")
    if monotone_ok:
        details.append("monotone-cdf: pass")

    roundtrip_ok = True
    first = backend.cdf_values(probes[0], 1, grid)
    second = backend.cdf_values(probes[0], 1, grid)
    agreement = float(np.max(np.abs(first - second)))
    if agreement > 1e-6:
        roundtrip_ok = False
        details.append(f"repeat-query disagreement {agreement:.2e}")
    tails = backend.cdf_values(probes[0], 1, np.array([-1e8, 1e8]))
    if tails[0] > 1e-6 or tails[1] < 1.0 - 1e-6:
        roundtrip_ok = False
        details.append(f"tail vectors off: {tails.tolist()}")
    p = backend.prob_value(probes[0])
    if not 0.0 < p < 1.0:
        roundtrip_ok = False
        details.append(f"propensity not interior: {p}")
    if roundtrip_ok:
        details.append("round-trip: pass")

    code = backend.close()
    exit_ok = code == 0
    details.append(f"exit code: {code}")
    return ProtocolCheckReport(
        handshake_ok=handshake_ok,
        monotone_ok=monotone_ok,
        roundtrip_ok=roundtrip_ok,
        exit_ok=exit_ok,
        details=tuple(details),
    )
