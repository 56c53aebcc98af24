"""Distance-error metrics and report files."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ParameterError


def _xy(points) -> np.ndarray:
    arr = np.array([getattr(p, "xy", p) for p in points], dtype=np.float64) if isinstance(points, list) \
        else np.asarray(points, dtype=np.float64)
    return arr.reshape(-1, 2)


def distance_errors(estimates, truths) -> np.ndarray:
    est, tru = _xy(estimates), _xy(truths)
    if len(est) != len(tru):
        raise ParameterError(f"{len(est)} estimates but {len(tru)} truths")
    if len(est) == 0:
        raise ParameterError("need at least one estimate")
    return np.hypot(est[:, 0] - tru[:, 0], est[:, 1] - tru[:, 1])


def mde(estimates, truths) -> float:
    """Mean Euclidean distance between estimates and true positions."""
    return float(distance_errors(estimates, truths).mean())


def error_cdf(errors) -> list[tuple[float, float]]:
    """Step-function CDF: one ``(error, fraction <= error)`` point per distinct error."""
    e = np.sort(np.asarray(errors, dtype=np.float64).reshape(-1))
    if len(e) == 0:
        raise ParameterError("error_cdf needs at least one error")
    n = len(e)
    last = np.append(e[1:] != e[:-1], True)
    return [(float(e[i]), (int(i) + 1) / n) for i in np.flatnonzero(last)]


def cdf_quantile(cdf, q: float) -> float:
    """Error at cumulative fraction ``q``.

    Where the step function sits exactly at ``q`` over an interval, the midpoint
    of that interval is returned, so ``q=0.5`` agrees with the usual median.
    """
    for i, (err, frac) in enumerate(cdf):
        if abs(frac - q) <= 1e-12 and i + 1 < len(cdf):
            return (err + cdf[i + 1][0]) / 2
        if frac >= q:
            return err
    return cdf[-1][0]


@dataclass
class ErrorReport:
    method: str
    estimates: np.ndarray
    truths: np.ndarray
    per_sample_errors: np.ndarray
    scene_digest: str = ""
    config_digest: str = ""

    @classmethod
    def build(cls, method, estimates, truths, scene_digest="", config_digest="") -> "ErrorReport":
        est, tru = _xy(estimates), _xy(truths)
        return cls(method, est, tru, distance_errors(est, tru), scene_digest, config_digest)

    @property
    def mde(self) -> float:
        return float(self.per_sample_errors.mean())

    @property
    def max_error(self) -> float:
        return float(self.per_sample_errors.max())

    @property
    def cdf(self) -> list[tuple[float, float]]:
        return error_cdf(self.per_sample_errors)

    def summary(self) -> dict:
        cdf = self.cdf
        return {
            "method": self.method,
            "n": int(len(self.per_sample_errors)),
            "mde_m": self.mde,
            "max_error_m": self.max_error,
            "median_m": cdf_quantile(cdf, 0.5),
            "p90_m": cdf_quantile(cdf, 0.9),
            "scene_digest": self.scene_digest,
            "config_digest": self.config_digest,
        }

    def write(self, directory) -> None:
        directory = Path(directory)
        tag = self.method.replace("+", "_")
        with open(directory / f"errors_{tag}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["index", "x_true", "y_true", "x_est", "y_est", "error_m"])
            for i, (t, e, err) in enumerate(zip(self.truths, self.estimates, self.per_sample_errors)):
                w.writerow([i, repr(float(t[0])), repr(float(t[1])), repr(float(e[0])), repr(float(e[1])),
                            repr(float(err))])
        with open(directory / f"cdf_{tag}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["error_m", "cumulative_fraction"])
            for err, frac in self.cdf:
                w.writerow([repr(err), repr(frac)])


def write_summary(reports: list[ErrorReport], path) -> None:
    Path(path).write_text(json.dumps([r.summary() for r in reports], indent=2) + "\n")


def format_table(summaries: list[dict]) -> str:
    lines = [f"{'method':<12}{'n':>8}{'MDE (m)':>12}{'median (m)':>12}{'p90 (m)':>12}{'max (m)':>12}"]
    for s in summaries:
        lines.append(f"{s['method']:<12}{s['n']:>8}{s['mde_m']:>12.3f}{s['median_m']:>12.3f}"
                     f"{s['p90_m']:>12.3f}{s['max_error_m']:>12.3f}")
    return "\n".join(lines)
