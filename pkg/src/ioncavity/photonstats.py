"""Two-photon event accounting for the heralded single-photon source.

Generative model per attempt: with probability ``p_SS`` both ions start in S
and two photons are emitted, otherwise one. Each photon is detected with
probability ``p_det`` and routed to detector 1 with probability
``splitter_ratio``. Detector ``i`` additionally fires a dark count with
probability ``rate_i * window`` (the mean dark count, which must stay below 1).
A detector registers at most one click per attempt.

Two-photon conventions:

* ``"cross"``: both detectors click (a coincidence, as recorded by APDs);
* ``"any"``: at least two detection events in total, same-detector pairs included.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Literal, Optional

import numpy as np

Convention = Literal["cross", "any"]
CONVENTIONS = ("cross", "any")
EVENTS = ("two_photons", "two_photons_one_lost_dark", "one_photon_dark", "two_darks")


@dataclass(frozen=True)
class CoincidenceParams:
    p_SS: float = 0.03
    p_det: float = 0.054
    window: float = 55e-6
    dark_rate_1: float = 3.2
    dark_rate_2: float = 3.8
    splitter_ratio: float = 0.5

    def __post_init__(self):
        for name in ("p_SS", "p_det", "splitter_ratio"):
            v = getattr(self, name)
            if not 0 <= v <= 1:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.window < 0 or self.dark_rate_1 < 0 or self.dark_rate_2 < 0:
            raise ValueError("window and dark rates must be >= 0")
        if max(self.dark_rate_1, self.dark_rate_2) * self.window > 1:
            raise ValueError("dark count probability per window exceeds 1")

    @property
    def dark_probs(self) -> tuple[float, float]:
        return self.dark_rate_1 * self.window, self.dark_rate_2 * self.window

    def to_dict(self) -> dict:
        return asdict(self)


def _check(convention: str) -> None:
    if convention not in CONVENTIONS:
        raise ValueError(f"convention must be one of {CONVENTIONS}")


def two_photon_expectation(params: CoincidenceParams, convention: Convention = "cross") -> dict:
    """Probability per attempt of a two-photon event, split into the four event classes.

    1. two photons emitted and both detected;
    2. two emitted, one detected, plus a dark count;
    3. one emitted and detected, plus a dark count;
    4. no photon detected, two dark counts.
    """
    _check(convention)
    p, q, s = params.p_det, params.p_SS, params.splitter_ratio
    d1, d2 = params.dark_probs
    both_dark = d1 * d2
    if convention == "cross":
        # a detected photon in one detector needs a dark count in the other
        c1 = s * d2 + (1 - s) * d1
        c2 = 2 * s * (1 - s) + s * s * d2 + (1 - s) ** 2 * d1
    else:
        c1 = 1 - (1 - d1) * (1 - d2)
        c2 = 1.0
    events = {
        "two_photons": q * p * p * c2,
        "two_photons_one_lost_dark": q * 2 * p * (1 - p) * c1,
        "one_photon_dark": (1 - q) * p * c1,
        "two_darks": (q * (1 - p) ** 2 + (1 - q) * (1 - p)) * both_dark,
    }
    total = sum(events.values())
    return {"convention": convention, "events": events, "total": total,
            "attempts_per_event": (1.0 / total) if total > 0 else math.inf}


def single_click_probabilities(params: CoincidenceParams) -> tuple[float, float]:
    """Probability per attempt that detector 1 (2) clicks."""
    p, q, s = params.p_det, params.p_SS, params.splitter_ratio
    d = params.dark_probs
    out = []
    for frac, dk in ((s, d[0]), (1 - s, d[1])):
        miss1 = 1 - p * frac
        no_photon = q * miss1 ** 2 + (1 - q) * miss1
        out.append(1 - no_photon * (1 - dk))
    return out[0], out[1]


def monte_carlo(params: CoincidenceParams, samples: int, seed: int = 0,
                convention: Convention = "cross", chunk: int = 5_000_000) -> dict:
    """Direct simulation of the generative model; returns event rate and its standard error."""
    _check(convention)
    if samples <= 0:
        raise ValueError("samples must be > 0")
    rng = np.random.default_rng(seed)
    d1, d2 = params.dark_probs
    hits = 0
    done = 0
    while done < samples:
        n = min(chunk, samples - done)
        two = rng.random(n) < params.p_SS
        emitted = 1 + two.astype(np.int8)
        det_a = rng.random(n) < params.p_det
        det_b = (rng.random(n) < params.p_det) & two
        to1_a = rng.random(n) < params.splitter_ratio
        to1_b = rng.random(n) < params.splitter_ratio
        dark1 = rng.random(n) < d1
        dark2 = rng.random(n) < d2
        det_a &= emitted >= 1
        if convention == "cross":
            click1 = (det_a & to1_a) | (det_b & to1_b) | dark1
            click2 = (det_a & ~to1_a) | (det_b & ~to1_b) | dark2
            event = click1 & click2
        else:
            event = (det_a.astype(np.int8) + det_b + dark1 + dark2) >= 2
        hits += int(np.count_nonzero(event))
        done += n
    rate = hits / samples
    return {"rate": rate, "stderr": math.sqrt(max(rate * (1 - rate), 1e-300) / samples),
            "events": hits, "samples": samples, "convention": convention}


def g2_zero(coincidences: int, singles: tuple[int, int], attempts: int) -> dict:
    """Normalised zero-delay coincidence rate N_c N / (N_1 N_2) with Poisson error."""
    if attempts <= 0:
        raise ValueError("attempts must be > 0")
    n1, n2 = singles
    if n1 <= 0 or n2 <= 0:
        raise ValueError("singles must be > 0")
    if coincidences < 0:
        raise ValueError("coincidences must be >= 0")
    g2 = coincidences * attempts / (n1 * n2)
    err = g2 / math.sqrt(coincidences) if coincidences > 0 else attempts / (n1 * n2)
    return {"g2": g2, "sigma": err}


def expected_g2(params: CoincidenceParams, convention: Convention = "cross") -> float:
    p1, p2 = single_click_probabilities(params)
    return two_photon_expectation(params, convention)["total"] / (p1 * p2)


def report(params: CoincidenceParams, attempts: int = 223_106, observed: Optional[int] = 28,
           mc_samples: int = 0, seed: int = 0) -> dict:
    """JSON-ready summary for both conventions."""
    out = {"params": params.to_dict(), "attempts": attempts, "conventions": {}}
    p1, p2 = single_click_probabilities(params)
    for conv in CONVENTIONS:
        res = two_photon_expectation(params, conv)
        entry = {
            "events_per_attempt": res["events"],
            "expected_events_per_attempt": res["total"],
            "attempts_per_event": res["attempts_per_event"],
            "expected_events": res["total"] * attempts,
            "expected_g2": res["total"] / (p1 * p2),
        }
        if mc_samples:
            entry["monte_carlo"] = monte_carlo(params, mc_samples, seed, conv)
        out["conventions"][conv] = entry
    out["default_convention"] = "cross"
    out["expected_events_per_attempt"] = out["conventions"]["cross"]["expected_events_per_attempt"]
    if observed is not None:
        singles = (round(p1 * attempts), round(p2 * attempts))
        out["observed"] = {"coincidences": observed, "singles_implied": list(singles),
                           **g2_zero(observed, singles, attempts)}
    return out


def report_json(rep: dict) -> str:
    return json.dumps(rep, indent=2, sort_keys=True)
