"""Command-line front end: experiment configs in, CSV/JSON artifacts out.

Usage::

    hillflow <command> [--config PATH] [--out DIR] [--grid N] [--tol X]
                       [--threads K] [command-specific flags]

Commands
--------
spectrum    band/gap/Dirichlet table of a 1D potential
flow        Dirichlet translation flow, reconstruction, isospectrality check
invariants  quadrature invariants of a 2D manifold point (+ optional fits)
jacobian    finite-difference Jacobian report at a manifold point
scan        rigidity certification over a coupling grid
selftest    run the built-in acceptance suite

Exit codes: 0 success, 1 config error, 2 verification failure.

A config is a single JSON object per file; ``default_config()`` documents
the schema and encodes the desk-scale setup (4 directions, three tracked
gaps each, 256-point quadrature grids).  Every field has a default, so all
commands also run without ``--config``.  Artifacts carry their column
header and the hash of the fully resolved config; a given config therefore
reproduces byte-identical files.
"""

import argparse
import hashlib
import json
import os
import sys

import numpy as np

from .errors import (ConfigError, HillflowError, MethodsDisagree,
                     NoFeasibleEpsilon)
from .hill1d import (GAP_TOL, Potential1D, Spectrum1D, compute_spectrum,
                     dirichlet_spectrum)
from .weierstrass import WpParams, one_gap_potential
from .finitegap import TorusPoint, initial_torus_point, mu_flow, \
    reconstruct_potential
from .lattice import build_lattice, direction_from_pr
from .potential2d import ManifoldPoint
from . import invariants as _inv
from . import jacobian as _jac


# ---------------------------------------------------------------------------
# default config (desk-scale setup)
# ---------------------------------------------------------------------------

_HALF_PI = float(np.pi / 2)

_TOP_KEYS = ("lattice", "directions", "eps", "index_sets", "base_gaps",
             "alpha", "grid", "m_max", "tolerances", "output_dir",
             "potential", "flow", "invariants", "jacobian", "scan")


def default_config():
    """The desk-scale experiment config as a plain dict (JSON-serializable).

    Two strongly coupled directions, two weak ones on a generic oblique
    lattice; three tracked gaps per direction; 256-point quadrature.
    """
    return {
        "lattice": {"v1": [1.0, 0.0], "v2": [0.35, 1.12]},
        "directions": [[0, 1], [1, 0], [1, 1], [1, -1]],
        "eps": [6.0 / 7.0, 6.0 / 6.5, 0.0, 0.0],
        "index_sets": [[1, 2, 3], [1, 2, 3], [1, 2, 3], [1, 2, 3]],
        "base_gaps": [[7.0, 0.8, 0.35], [6.5, 0.9, 0.3],
                      [1.2, 0.8, 0.5], [0.9, 0.6, 0.3]],
        "alpha": [[_HALF_PI, 0.7, 1.3], [_HALF_PI, 0.4, 2.1],
                  [0.9, 1.7, 0.45], [2.3, 0.8, 1.15]],
        "grid": 256,
        "m_max": 10,
        "tolerances": {"isospectral": 1e-6, "disagreement": 1e-4,
                       "fit_residual": 1e-6},
        "output_dir": "out",
        "potential": {"kind": "wp", "tau": 1.0},
        "flow": {"potential": {"kind": "wp", "tau": 1.0},
                 "s_count": 16, "s_max": 1.0, "sample_grid": 256,
                 "m_max": 8, "dirichlet_checks": 2},
        "invariants": {"closed_form": True, "mixed": [], "b_table": []},
        "jacobian": {"structure": False, "reduced": False,
                     "h_alpha": 1e-5, "eps3_step": 1e-3},
        "scan": {"eps1": None, "eps2": None, "beta": 0.3,
                 "eps3_values": [0.05, 0.15, 0.3],
                 "eps4_values": [0.1, 0.2],
                 "alpha_samples": None, "grid": 64, "h_alpha": 1e-5,
                 "selection_grid": 128, "eps_candidates": None},
    }


# ---------------------------------------------------------------------------
# schema validation
# ---------------------------------------------------------------------------

def _fail(msg):
    raise ConfigError(msg)


def _is_pow2(n):
    return isinstance(n, int) and n >= 2 and (n & (n - 1)) == 0


def _number(x, what, *, lo=None, hi=None, strict_lo=False):
    if isinstance(x, bool) or not isinstance(x, (int, float)):
        _fail("%s must be a number, got %r" % (what, x))
    x = float(x)
    if not np.isfinite(x):
        _fail("%s must be finite" % what)
    if lo is not None and (x < lo or (strict_lo and x == lo)):
        _fail("%s must be %s %g" % (what, ">" if strict_lo else ">=", lo))
    if hi is not None and x > hi:
        _fail("%s must be <= %g" % (what, hi))
    return x


def _int(x, what, *, lo=None):
    if isinstance(x, bool) or not isinstance(x, int):
        _fail("%s must be an integer, got %r" % (what, x))
    if lo is not None and x < lo:
        _fail("%s must be >= %d" % (what, lo))
    return x


def _pow2(x, what):
    if not _is_pow2(x):
        _fail("%s must be a power of two >= 2, got %r" % (what, x))
    return x


def _number_list(x, what, n=None):
    if not isinstance(x, (list, tuple)):
        _fail("%s must be a list" % what)
    if n is not None and len(x) != n:
        _fail("%s must have length %d, got %d" % (what, n, len(x)))
    return [_number(v, "%s[%d]" % (what, i)) for i, v in enumerate(x)]


def _subdict(cfg, key, defaults):
    """Merge a config sub-block over its defaults, rejecting unknown keys."""
    block = cfg.get(key, {})
    if block is None:
        block = {}
    if not isinstance(block, dict):
        _fail("'%s' must be an object" % key)
    unknown = sorted(set(block) - set(defaults))
    if unknown:
        _fail("unknown keys in '%s': %s" % (key, ", ".join(unknown)))
    out = dict(defaults)
    out.update(block)
    return out


def _validate_potential(spec, what):
    if not isinstance(spec, dict):
        _fail("%s must be an object" % what)
    kind = spec.get("kind")
    if kind not in ("zero", "cos", "wp", "lame2"):
        _fail("%s.kind must be one of zero|cos|wp|lame2, got %r"
              % (what, kind))
    out = {"kind": kind}
    if kind == "cos":
        out["amplitude"] = _number(spec.get("amplitude", 2.0),
                                   what + ".amplitude")
        out["frequency"] = _int(spec.get("frequency", 1),
                                what + ".frequency", lo=1)
        extra = set(spec) - {"kind", "amplitude", "frequency"}
    elif kind in ("wp", "lame2"):
        if "tau" not in spec:
            _fail("%s.tau is required for kind %r" % (what, kind))
        out["tau"] = _number(spec["tau"], what + ".tau", lo=0.0,
                             strict_lo=True)
        extra = set(spec) - {"kind", "tau"}
    else:
        extra = set(spec) - {"kind"}
    if extra:
        _fail("unknown keys in %s: %s" % (what, ", ".join(sorted(extra))))
    return out


class ExperimentConfig:
    """A validated experiment description.

    Construct via :meth:`from_dict` / :meth:`from_file`; the resolved
    (defaults-merged) dict is kept for hashing, so identical inputs give
    identical artifact headers.
    """

    def __init__(self, resolved):
        self._resolved = resolved

    # -- constructors -------------------------------------------------------

    @classmethod
    def from_file(cls, path):
        return cls.from_dict(_read_json_object(path))

    @classmethod
    def from_dict(cls, data):
        unknown = sorted(set(data) - set(_TOP_KEYS))
        if unknown:
            _fail("unknown config keys: %s" % ", ".join(unknown))
        base = default_config()
        cfg = dict(base)
        cfg.update(data)

        lat = _subdict(cfg, "lattice", base["lattice"])
        lat = {"v1": _number_list(lat["v1"], "lattice.v1", 2),
               "v2": _number_list(lat["v2"], "lattice.v2", 2)}

        dirs = cfg["directions"]
        if not isinstance(dirs, (list, tuple)) or len(dirs) < 3:
            _fail("'directions' must list at least three [p, r] pairs")
        dirs = [[_int(p, "directions[%d].p" % i), _int(r, "directions[%d].r" % i)]
                for i, (p, r) in enumerate(_pairs(dirs, "directions"))]

        nd = len(dirs)
        eps = _number_list(cfg["eps"], "eps", 4)
        for i, e in enumerate(eps):
            _number(e, "eps[%d]" % i, lo=0.0, hi=1.0)

        isets = cfg["index_sets"]
        if not isinstance(isets, (list, tuple)) or len(isets) != nd:
            _fail("'index_sets' must have one row per direction")
        isets = [[_int(m, "index_sets[%d][%d]" % (j, k), lo=1)
                  for k, m in enumerate(row)] for j, row in enumerate(isets)]

        gaps = cfg["base_gaps"]
        if not isinstance(gaps, (list, tuple)) or len(gaps) != nd:
            _fail("'base_gaps' must have one row per direction")
        gaps = [[_number(g, "base_gaps[%d][%d]" % (j, k), lo=0.0,
                         strict_lo=True)
                 for k, g in enumerate(row)] for j, row in enumerate(gaps)]

        alpha = cfg["alpha"]
        if not isinstance(alpha, (list, tuple)) or len(alpha) != nd:
            _fail("'alpha' must have one row per direction")
        alpha = [_number_list(row, "alpha[%d]" % j, len(isets[j]))
                 for j, row in enumerate(alpha)]
        for j in range(nd):
            if len(gaps[j]) != len(isets[j]):
                _fail("base_gaps[%d] does not match index_sets[%d]" % (j, j))

        grid = _pow2(cfg["grid"], "grid")
        m_max = _int(cfg["m_max"], "m_max", lo=1)

        tols = cfg["tolerances"]
        if not isinstance(tols, dict) or not tols:
            _fail("'tolerances' must be a non-empty object")
        tols = {str(k): _number(v, "tolerances.%s" % k, lo=0.0,
                                strict_lo=True)
                for k, v in tols.items()}

        out_dir = cfg["output_dir"]
        if not isinstance(out_dir, str) or not out_dir:
            _fail("'output_dir' must be a non-empty string")

        potential = _validate_potential(cfg["potential"], "potential")

        user_flow = cfg.get("flow") or {}
        if not isinstance(user_flow, dict):
            _fail("'flow' must be an object")
        if "spectrum" in user_flow and "potential" in user_flow:
            _fail("flow takes either 'potential' or 'spectrum', not both")
        flow_defaults = dict(base["flow"])
        flow_defaults["spectrum"] = None
        flow = _subdict(cfg, "flow", flow_defaults)
        flow_out = {
            "s_count": _int(flow["s_count"], "flow.s_count", lo=1),
            "s_max": _number(flow["s_max"], "flow.s_max", lo=0.0,
                             strict_lo=True),
            "sample_grid": _pow2(flow["sample_grid"], "flow.sample_grid"),
            "m_max": _int(flow["m_max"], "flow.m_max", lo=1),
            "dirichlet_checks": _int(flow["dirichlet_checks"],
                                     "flow.dirichlet_checks", lo=0),
        }
        if flow.get("spectrum") is not None:
            sp = flow["spectrum"]
            if not isinstance(sp, dict):
                _fail("flow.spectrum must be an object")
            extra = set(sp) - {"lambda0", "gaps", "alpha0"}
            if extra:
                _fail("unknown keys in flow.spectrum: %s"
                      % ", ".join(sorted(extra)))
            lam0 = _number(sp.get("lambda0", 0.0), "flow.spectrum.lambda0")
            rows = sp.get("gaps")
            if not isinstance(rows, (list, tuple)) or not rows:
                _fail("flow.spectrum.gaps must be a non-empty list of "
                      "[lo, hi] pairs")
            edges = []
            prev = lam0
            for i, pair in enumerate(_pairs(rows, "flow.spectrum.gaps")):
                lo = _number(pair[0], "flow.spectrum.gaps[%d][0]" % i)
                hi = _number(pair[1], "flow.spectrum.gaps[%d][1]" % i)
                if not (prev < lo <= hi):
                    _fail("flow.spectrum.gaps must be ordered: need "
                          "%g < %g <= %g" % (prev, lo, hi))
                edges.append([lo, hi])
                prev = hi
            spec_out = {"lambda0": lam0, "gaps": edges}
            if sp.get("alpha0") is not None:
                spec_out["alpha0"] = _number_list(sp["alpha0"],
                                                  "flow.spectrum.alpha0")
            flow_out["spectrum"] = spec_out
        else:
            if flow.get("potential") is None:
                _fail("flow needs 'potential' or 'spectrum'")
            flow_out["potential"] = _validate_potential(flow["potential"],
                                                        "flow.potential")

        inv = _subdict(cfg, "invariants", base["invariants"])
        if not isinstance(inv["closed_form"], bool):
            _fail("invariants.closed_form must be true or false")
        inv_out = {
            "closed_form": inv["closed_form"],
            "mixed": [[_int(v, "invariants.mixed[%d]" % i, lo=1)
                       for v in _pair(row, "invariants.mixed[%d]" % i)]
                      for i, row in enumerate(inv["mixed"] or [])],
            "b_table": [[_int(v, "invariants.b_table[%d]" % i, lo=1)
                         for v in _triple(row, "invariants.b_table[%d]" % i)]
                        for i, row in enumerate(inv["b_table"] or [])],
        }

        jac = _subdict(cfg, "jacobian", base["jacobian"])
        jac_out = {
            "structure": bool(jac["structure"]),
            "reduced": bool(jac["reduced"]),
            "h_alpha": _number(jac["h_alpha"], "jacobian.h_alpha", lo=0.0,
                               strict_lo=True),
            "eps3_step": _number(jac["eps3_step"], "jacobian.eps3_step",
                                 lo=0.0, strict_lo=True),
        }

        scan = _subdict(cfg, "scan", base["scan"])
        scan_out = {
            "grid": _pow2(scan["grid"], "scan.grid"),
            "h_alpha": _number(scan["h_alpha"], "scan.h_alpha", lo=0.0,
                               strict_lo=True),
            "eps3_values": _number_list(scan["eps3_values"],
                                        "scan.eps3_values"),
            "eps4_values": _number_list(scan["eps4_values"],
                                        "scan.eps4_values"),
        }
        if not scan_out["eps3_values"] or not scan_out["eps4_values"]:
            _fail("scan.eps3_values and scan.eps4_values must be non-empty")
        if (scan["eps1"] is None) != (scan["eps2"] is None):
            _fail("scan.eps1 and scan.eps2 must be given together")
        if scan["eps1"] is not None:
            scan_out["eps1"] = _number(scan["eps1"], "scan.eps1", lo=0.0,
                                       hi=1.0)
            scan_out["eps2"] = _number(scan["eps2"], "scan.eps2", lo=0.0,
                                       hi=1.0)
            scan_out["beta"] = None
            scan_out["selection_grid"] = None
        else:
            scan_out["eps1"] = scan_out["eps2"] = None
            scan_out["beta"] = _number(scan["beta"], "scan.beta", lo=0.0,
                                       hi=1.0, strict_lo=True)
            sg = scan["selection_grid"]
            scan_out["selection_grid"] = grid if sg is None \
                else _pow2(sg, "scan.selection_grid")
        cand = scan["eps_candidates"]
        if cand is not None:
            cand = _number_list(cand, "scan.eps_candidates")
            if not cand or any(c <= 0.0 or c > 1.0 for c in cand):
                _fail("scan.eps_candidates must be values in (0, 1]")
            if any(b >= a for a, b in zip(cand, cand[1:])):
                _fail("scan.eps_candidates must be strictly decreasing")
        scan_out["eps_candidates"] = cand
        samples = scan["alpha_samples"]
        if samples is not None:
            if not isinstance(samples, dict) or not samples:
                _fail("scan.alpha_samples must be a non-empty object")
            samples = {
                str(k): [_number_list(row, "scan.alpha_samples[%s][%d]"
                                      % (k, j), len(isets[j]))
                         for j, row in enumerate(_rows(v, nd,
                                                 "scan.alpha_samples[%s]" % k))]
                for k, v in samples.items()}
        scan_out["alpha_samples"] = samples

        resolved = {
            "lattice": lat, "directions": dirs, "eps": eps,
            "index_sets": isets, "base_gaps": gaps, "alpha": alpha,
            "grid": grid, "m_max": m_max, "tolerances": tols,
            "output_dir": out_dir, "potential": potential,
            "flow": flow_out, "invariants": inv_out, "jacobian": jac_out,
            "scan": scan_out,
        }
        return cls(resolved)

    # -- accessors ----------------------------------------------------------

    def __getitem__(self, key):
        return self._resolved[key]

    @property
    def resolved(self):
        return self._resolved

    @property
    def config_hash(self):
        """Fingerprint of the experiment (the destination directory is
        excluded, so moving the output does not change the tag)."""
        payload = {k: v for k, v in self._resolved.items()
                   if k != "output_dir"}
        text = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()[:12]

    @property
    def output_dir(self):
        return self._resolved["output_dir"]

    def tolerance(self, name, override=None):
        if override is not None:
            return float(override)
        return self._resolved["tolerances"][name]

    # -- model construction -------------------------------------------------

    def manifold_point(self, *, eps=None, alpha=None):
        """Build the configured ManifoldPoint (constructor errors become
        config errors)."""
        r = self._resolved
        try:
            lat = build_lattice(r["lattice"]["v1"], r["lattice"]["v2"])
            dirs = tuple(direction_from_pr(lat, p, rr)
                         for p, rr in r["directions"])
            ang = alpha if alpha is not None else r["alpha"]
            pt = ManifoldPoint(
                lattice=lat, directions=dirs,
                eps=tuple(eps if eps is not None else r["eps"]),
                index_sets=tuple(tuple(I) for I in r["index_sets"]),
                base_gaps=tuple(tuple(g) for g in r["base_gaps"]),
                alpha=tuple(TorusPoint.from_alpha_tilde(a) for a in ang))
        except (ValueError, TypeError, HillflowError) as exc:
            raise ConfigError("invalid manifold description: %s" % exc)
        return pt


def _read_json_object(path):
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as exc:
        _fail("cannot read config %r: %s" % (str(path), exc))
    except json.JSONDecodeError as exc:
        _fail("config %r is not valid JSON: %s" % (str(path), exc))
    if not isinstance(data, dict):
        _fail("config root must be a JSON object")
    return data


def _pairs(rows, what):
    for i, row in enumerate(rows):
        yield _pair(row, "%s[%d]" % (what, i))


def _pair(row, what):
    if not isinstance(row, (list, tuple)) or len(row) != 2:
        _fail("%s must be a pair" % what)
    return row


def _triple(row, what):
    if not isinstance(row, (list, tuple)) or len(row) != 3:
        _fail("%s must be a triple" % what)
    return row


def _rows(v, n, what):
    if not isinstance(v, (list, tuple)) or len(v) != n:
        _fail("%s must have one angle row per direction (%d)" % (what, n))
    return v


# ---------------------------------------------------------------------------
# potential construction
# ---------------------------------------------------------------------------

def parse_potential_arg(text):
    """Shorthand parser for --potential: zero | cos | wp:TAU | lame2:TAU."""
    name, _, arg = text.partition(":")
    if name == "zero":
        return {"kind": "zero"}
    if name == "cos":
        return {"kind": "cos", "amplitude": 2.0, "frequency": 1}
    if name in ("wp", "lame2"):
        if not arg:
            _fail("--potential %s needs a tau value, e.g. %s:1.0"
                  % (name, name))
        try:
            tau = float(arg)
        except ValueError:
            _fail("--potential %s: bad tau %r" % (name, arg))
        return {"kind": name, "tau": tau}
    _fail("unknown potential %r (use zero | cos | wp:TAU | lame2:TAU)"
          % text)


def build_potential(spec):
    """Potential1D from a validated potential spec dict."""
    kind = spec["kind"]
    if kind == "zero":
        return Potential1D.zero(), "zero"
    if kind == "cos":
        a = np.zeros(spec["frequency"])
        a[-1] = spec["amplitude"]
        return (Potential1D(a, np.zeros_like(a)),
                "%gcos(2pi %ds)" % (spec["amplitude"], spec["frequency"]))
    try:
        base = one_gap_potential(WpParams(spec["tau"]))
    except HillflowError as exc:
        raise ConfigError("potential tau=%g rejected: %s"
                          % (spec["tau"], exc))
    if kind == "wp":
        return base, "wp(tau=%g)" % spec["tau"]
    q = Potential1D(3.0 * np.asarray(base.cos_coeffs),
                    np.zeros(len(base.cos_coeffs)))
    return q, "lame2(tau=%g)" % spec["tau"]


# ---------------------------------------------------------------------------
# artifact helpers
# ---------------------------------------------------------------------------

def _ensure_outdir(cfg):
    os.makedirs(cfg.output_dir, exist_ok=True)
    return cfg.output_dir


def _write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _tag(cfg):
    """Comment content carrying the config hash; CSV writers append it as
    a trailing ``# ...`` line, which plain readers skip."""
    return "config=%s" % cfg.config_hash


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_spectrum(cfg, *, potential=None, tol=None):
    """Band/gap/Dirichlet table of a 1D potential -> spectrum.csv."""
    spec_dict = potential if potential is not None else cfg["potential"]
    q, desc = build_potential(spec_dict)
    spec = compute_spectrum(q, cfg["m_max"])
    if tol is not None:
        spec = Spectrum1D(spec.lambda0, spec.gap_edges, spec.critical,
                          spec.closed, spec.dirichlet, gap_tol=float(tol))
    out = _ensure_outdir(cfg)
    path = os.path.join(out, "spectrum.csv")
    spec.to_csv(path, header_extra=_tag(cfg))
    print("spectrum[%s]: lambda0=%.12g, open gaps %s -> %s"
          % (desc, spec.lambda0, spec.open_set, path))
    return 0


def _flow_inputs(cfg):
    """(Spectrum1D, start angles, q or None, description) from the flow
    block."""
    fl = cfg["flow"]
    if "spectrum" in fl:
        sp = fl["spectrum"]
        edges = np.asarray(sp["gaps"], dtype=float)
        closed = edges[:, 1] - edges[:, 0] <= GAP_TOL
        spec = Spectrum1D(sp["lambda0"], edges,
                          critical=0.5 * (edges[:, 0] + edges[:, 1]),
                          closed=closed)
        n_open = len(spec.open_set)
        alpha0 = sp.get("alpha0")
        if alpha0 is None:
            alpha0 = [_HALF_PI] * n_open
        if len(alpha0) != n_open:
            _fail("flow.spectrum.alpha0 must list one angle per open gap "
                  "(%d)" % n_open)
        return spec, np.asarray(alpha0, float), None, "explicit spectrum"
    q, desc = build_potential(fl["potential"])
    spec = compute_spectrum(q, fl["m_max"])
    start = initial_torus_point(q, spec)
    return spec, start, q, desc


def cmd_flow(cfg, *, tol=None):
    """Translation flow + reconstruction -> flow.csv, flow_summary.json.

    Exit 2 when the reconstructed potential's spectrum (or the Dirichlet
    cross-check against the translated potential) drifts beyond the
    isospectrality tolerance.
    """
    budget = cfg.tolerance("isospectral", tol)
    fl = cfg["flow"]
    spec, start, q, desc = _flow_inputs(cfg)
    out = _ensure_outdir(cfg)

    s_grid = np.linspace(0.0, fl["s_max"], fl["s_count"] + 1)
    fr = mu_flow(spec, start, s_grid)
    path = os.path.join(out, "flow.csv")
    fr.to_csv(path, header_extra=_tag(cfg))

    # reconstruction on a dense grid; its spectrum must match the input data
    n = fl["sample_grid"]
    dense = mu_flow(spec, start, np.arange(n) / n)
    rec = reconstruct_potential(spec, dense.mu)
    mean_off = float(np.mean(rec))
    spec_rec = compute_spectrum(Potential1D.from_samples(rec), spec.m_max)
    drift_spec = max(
        abs(spec_rec.lambda0 + mean_off - spec.lambda0),
        float(np.max(np.abs(spec_rec.gap_edges + mean_off
                            - spec.gap_edges))) if spec.m_max else 0.0)

    # Dirichlet cross-check against the translated potential
    drift_mu = 0.0
    checks = fl["dirichlet_checks"] if q is not None else 0
    idx_open = np.asarray(spec.open_set, int) - 1
    for k in range(1, checks + 1):
        s_k = fl["s_max"] * k / (checks + 1)
        mu_ref = dirichlet_spectrum(q.translate(s_k), spec.m_max)[idx_open]
        i_k = int(np.argmin(np.abs(s_grid - s_k)))
        fr_k = mu_flow(spec, start, np.array([0.0, s_k])) \
            if s_grid[i_k] != s_k else None
        mu_flowed = fr.mu[i_k] if fr_k is None else fr_k.mu[-1]
        drift_mu = max(drift_mu, float(np.max(np.abs(mu_flowed - mu_ref)))
                       if idx_open.size else 0.0)

    closure = float(np.max(np.abs(fr.mu[-1] - fr.mu[0]))) \
        if fr.mu.size and fl["s_max"] == 1.0 else None
    summary = {
        "config": cfg.config_hash, "potential": desc,
        "open_gaps": spec.open_set,
        "spectrum_drift": drift_spec, "dirichlet_drift": drift_mu,
        "closure_gap": closure, "tolerance": budget,
        "mean_offset": mean_off,
    }
    _write_json(os.path.join(out, "flow_summary.json"), summary)
    ok = drift_spec <= budget and drift_mu <= budget
    print("flow[%s]: spectrum drift %.3e, dirichlet drift %.3e "
          "(budget %.1e) -> %s" % (desc, drift_spec, drift_mu, budget, path))
    if not ok:
        print("flow: isospectrality violated", file=sys.stderr)
        return 2
    return 0


def cmd_invariants(cfg, *, tol=None):
    """Invariant vector (+ optional closed-form fits, b table, mixed
    derivatives) -> invariants.csv and friends."""
    point = cfg.manifold_point()
    grid = cfg["grid"]
    out = _ensure_outdir(cfg)
    blocks = cfg["invariants"]

    vec = _inv.InvariantVector.compute(point, grid=grid,
                                       verify_quadrature=True)
    path = os.path.join(out, "invariants.csv")
    vec.to_csv(path, header_extra=_tag(cfg))
    written = [path]

    if blocks["closed_form"]:
        fits = {}
        for (j, m) in point.small_gap_set:
            if j < 3:
                continue
            fit = _inv.phi_limit_closed_form(point, j, m, grid=grid)
            fits["%d,%d" % (j, m)] = {
                "coefficient": fit.coefficient,
                "fitted_amplitude": fit.fitted_amplitude,
                "fitted_phase": fit.fitted_phase,
                "offset": fit.offset,
                "residual": fit.residual,
            }
        cf_path = os.path.join(out, "closed_form.json")
        _write_json(cf_path, {"config": cfg.config_hash, "fits": fits})
        written.append(cf_path)

    if blocks["b_table"]:
        lines = ["j,m,n,b" + _tag(cfg)]
        for (j, m, n_idx) in blocks["b_table"]:
            val = _inv.b_coeff(point, j, m, n_idx, grid=grid)
            lines.append("%d,%d,%d,%.17g" % (j, m, n_idx, val))
        bt_path = os.path.join(out, "b_table.csv")
        with open(bt_path, "w") as fh:
            fh.write("\n".join(lines) + "\n")
        written.append(bt_path)

    if blocks["mixed"]:
        budget = cfg.tolerance("disagreement", tol)
        rows = {}
        for (j, m) in blocks["mixed"]:
            r = _inv.mixed_derivative(point, j, m, grid=grid,
                                      disagree_tol=budget)
            rows["%d,%d" % (j, m)] = {
                "quadrature": r.quadrature,
                "finite_difference": r.finite_difference,
                "normalized": r.normalized,
                "reference": r.reference,
                "coupling": r.coupling,
            }
        mx_path = os.path.join(out, "mixed.json")
        _write_json(mx_path, {"config": cfg.config_hash,
                              "disagreement_budget": budget, "rows": rows})
        written.append(mx_path)

    print("invariants: %d values on grid %d -> %s"
          % (len(vec.values), grid, ", ".join(written)))
    return 0


def cmd_jacobian(cfg, *, tol=None):
    """Jacobian report -> jacobian.csv + jacobian.json (optional structure
    and reduced-determinant reports at the decoupled point)."""
    point = cfg.manifold_point()
    grid = cfg["grid"]
    jb = cfg["jacobian"]
    out = _ensure_outdir(cfg)

    rep = _jac.jacobian(point, jb["h_alpha"], grid=grid)
    rank = int(np.linalg.matrix_rank(rep.J, tol=rep.ztol))

    lines = ["j,m," + ",".join("d_%d_%d" % lm for lm in rep.labels)
             + _tag(cfg)]
    for (j, m), row in zip(rep.labels, rep.J):
        lines.append("%d,%d," % (j, m)
                     + ",".join("%.17g" % v for v in row))
    csv_path = os.path.join(out, "jacobian.csv")
    with open(csv_path, "w") as fh:
        fh.write("\n".join(lines) + "\n")

    payload = {
        "config": cfg.config_hash, "grid": grid,
        "det": rep.det, "condition_number": rep.condition_number,
        "noise_floor": rep.noise_floor, "ztol": rep.ztol,
        "numerical_rank": rank, "n_coupled": rep.n_coupled,
        "labels": ["%d,%d" % lm for lm in rep.labels],
        "zero_columns": ["%d,%d" % rep.labels[i] for i in rep.zero_columns],
        "structure_flags": rep.structure_flags,
    }
    json_path = os.path.join(out, "jacobian.json")
    _write_json(json_path, payload)
    written = [csv_path, json_path]

    if jb["structure"]:
        st = _jac.structure_at_eps0(point, grid=grid, h_alpha=jb["h_alpha"],
                                    eps3_step=jb["eps3_step"],
                                    pattern_tol=tol if tol is not None
                                    else 1e-4)
        st_path = os.path.join(out, "structure.json")
        _write_json(st_path, {
            "config": cfg.config_hash,
            "j_norm": st.j_norm,
            "coupled_residual": st.coupled_residual,
            "mixed_diagonal": list(st.mixed_diagonal),
            "i3_block_max": st.i3_block_max,
            "single_entries": list(st.single_entries),
            "closed_form": list(st.closed_form),
            "closed_form_residual": st.closed_form_residual,
            "off_pattern": st.off_pattern,
        })
        written.append(st_path)
    if jb["reduced"]:
        rd = _jac.reduced_determinant(point, grid=grid,
                                      h_alpha=jb["h_alpha"],
                                      eps3_step=jb["eps3_step"])
        rd_path = os.path.join(out, "reduced.json")
        _write_json(rd_path, {
            "config": cfg.config_hash,
            "direct": rd.direct,
            "diagonal_product": rd.diagonal_product,
            "diagonal": list(rd.diagonal),
            "rel_gap": rd.rel_gap,
        })
        written.append(rd_path)

    print("jacobian: det=%.6e, rank %d/%d, %d zero columns -> %s"
          % (rep.det, rank, len(rep.labels), len(rep.zero_columns),
             ", ".join(written)))
    return 0


def cmd_scan(cfg):
    """Rigidity certification scan -> scan.csv + scan_summary.json.

    Per-cell failures are never fatal; infeasible coupling selection is
    reported in the summary (exit 0 either way).
    """
    sc = cfg["scan"]
    out = _ensure_outdir(cfg)
    template = cfg.manifold_point()

    eps1, eps2 = sc["eps1"], sc["eps2"]
    selection = None
    if eps1 is None:
        cand = sc["eps_candidates"]
        try:
            selection = _inv.select_epsilons(
                sc["beta"], template, grid=sc["selection_grid"],
                eps_grid=None if cand is None else np.asarray(cand))
        except NoFeasibleEpsilon as exc:
            summary = {"config": cfg.config_hash, "feasible": False,
                       "beta": sc["beta"], "error": str(exc)}
            _write_json(os.path.join(out, "scan_summary.json"), summary)
            print("scan: no feasible coupling sizes at beta=%g (%s)"
                  % (sc["beta"], exc))
            return 0
        eps1, eps2 = selection.eps1, selection.eps2
        selection.to_json(os.path.join(out, "selection.json"))

    samples = sc["alpha_samples"]
    if samples is None:
        samples = {"config": cfg["alpha"]}
    result = _jac.rigidity_scan(
        template, eps1, eps2,
        eps3_values=sc["eps3_values"], eps4_values=sc["eps4_values"],
        alpha_samples=samples, grid=sc["grid"], h_alpha=sc["h_alpha"])
    csv_path = os.path.join(out, "scan.csv")
    result.to_csv(csv_path, header_comment="config=%s" % cfg.config_hash)

    summary = {
        "config": cfg.config_hash, "feasible": True,
        "eps1": eps1, "eps2": eps2,
        "beta": sc["beta"],
        "n_cells": len(result.cells),
        "certified_fraction": result.certified_fraction,
        "zero_set": [list(c) for c in result.zero_set],
    }
    if selection is not None:
        summary["slacks"] = {name: val for name, val in selection.slacks}
    _write_json(os.path.join(out, "scan_summary.json"), summary)
    print("scan: %d cells, certified fraction %.3f -> %s"
          % (len(result.cells), result.certified_fraction, csv_path))
    return 0


def cmd_selftest(cfg, *, criteria=None):
    """Run the acceptance suite; exit 2 on any criterion failure."""
    from . import acceptance

    out = _ensure_outdir(cfg)
    results = acceptance.run_criteria(criteria, report=print)
    payload = {
        "config": cfg.config_hash,
        "passed": all(r.passed for r in results),
        "criteria": [{
            "number": r.number, "name": r.name, "passed": r.passed,
            "detail": r.detail, "seconds": round(r.seconds, 3),
        } for r in results],
    }
    _write_json(os.path.join(out, "selftest_report.json"), payload)
    n_bad = sum(not r.passed for r in results)
    print("selftest: %d/%d criteria passed -> %s"
          % (len(results) - n_bad, len(results),
             os.path.join(out, "selftest_report.json")))
    return 0 if n_bad == 0 else 2


# ---------------------------------------------------------------------------
# argument parsing / dispatch
# ---------------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(
        prog="hillflow",
        description="Spectral experiments: band/gap tables, isospectral "
                    "flows, quadrature invariants, rigidity certificates.")
    sub = p.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH",
                        help="experiment config (JSON); defaults to the "
                             "built-in desk-scale setup")
    common.add_argument("--out", metavar="DIR",
                        help="override the config's output directory")
    common.add_argument("--grid", type=int, metavar="N",
                        help="override the quadrature grid (power of two)")
    common.add_argument("--tol", type=float, metavar="X",
                        help="override the command's primary tolerance")
    common.add_argument("--threads", type=int, default=1, metavar="K",
                        help="worker threads (reserved; execution is "
                             "currently serial)")

    sp = sub.add_parser("spectrum", parents=[common],
                        help="band/gap/Dirichlet table of a 1D potential")
    sp.add_argument("--potential", metavar="SPEC",
                    help="zero | cos | wp:TAU | lame2:TAU "
                         "(default: config's potential)")
    sub.add_parser("flow", parents=[common],
                   help="translation flow, reconstruction, isospectrality")
    sub.add_parser("invariants", parents=[common],
                   help="quadrature invariants of the configured point")
    sub.add_parser("jacobian", parents=[common],
                   help="finite-difference Jacobian report")
    sub.add_parser("scan", parents=[common],
                   help="rigidity certification over a coupling grid")
    st = sub.add_parser("selftest", parents=[common],
                        help="run the built-in acceptance suite")
    st.add_argument("--criteria", metavar="LIST",
                    help="comma-separated criterion numbers (default: all)")
    return p


def _load_config(args):
    if args.threads is not None and args.threads < 1:
        _fail("--threads must be >= 1")
    if args.config is None:
        data = default_config()
    else:
        data = _read_json_object(args.config)
    if args.grid is not None:
        data = dict(data, grid=args.grid)
    if args.out is not None:
        data = dict(data, output_dir=args.out)
    return ExperimentConfig.from_dict(data)


def _parse_criteria(text):
    if text is None:
        return None
    out = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        try:
            out.append(int(part))
        except ValueError:
            _fail("--criteria expects comma-separated integers, got %r"
                  % part)
    if not out:
        _fail("--criteria selected nothing")
    return out


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = _load_config(args)
        if args.command == "spectrum":
            pot = parse_potential_arg(args.potential) \
                if args.potential else None
            if pot is not None:
                pot = _validate_potential(pot, "--potential")
            return cmd_spectrum(cfg, potential=pot, tol=args.tol)
        if args.command == "flow":
            return cmd_flow(cfg, tol=args.tol)
        if args.command == "invariants":
            return cmd_invariants(cfg, tol=args.tol)
        if args.command == "jacobian":
            return cmd_jacobian(cfg, tol=args.tol)
        if args.command == "scan":
            return cmd_scan(cfg)
        return cmd_selftest(cfg, criteria=_parse_criteria(args.criteria))
    except ConfigError as exc:
        print("config error: %s" % exc, file=sys.stderr)
        return 1
    except MethodsDisagree as exc:
        print("verification failure (dual-method disagreement): %s" % exc,
              file=sys.stderr)
        return 2
    except HillflowError as exc:
        print("verification failure: %s" % exc, file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
