"""Line-oriented text formats.

Ad-auction instance::

    adauction <m> <n>
    budget <i> <B_i>                 (one line per buyer, i = 1..m)
    item <e> <i1>:<bid1> ... <ik>:<bidk>   (one line per item, e = 0..n-1)

Ad-auction prediction: one line ``<e> <buyer|->`` per item.

Packing instance::

    packing <m> <n>
    bounds <d> <rho>                 (optional)
    objective linear
    weight <e> <w>                   (one line per element)

or, for a weighted coverage objective::

    objective coverage <U>
    point <u> <w>                    (optional, unit weight by default)
    cover <e> <u1> <u2> ...

followed by one ``col <e> <i>:<b_ie> ...`` line per element (resources
``i = 0..m-1``; omitted entries are 0).

Packing prediction: one line ``<e> <0|1>`` per element.

Packing trace::

    trace packing m=<m> d=<d> rho_bar=<r> lam=<l> mu=<u> eta=<h>
    col <e> pred=<0|1> b=<v,...> bbar=<v,...>
    step <e> y=<y_e> grad=<g> alpha=<a,...>
    final <e> y=<y_e> x=<x_e>

Blank lines and lines starting with ``#`` are ignored everywhere.  Floats
are written with ``repr`` so files round-trip exactly.
"""

import numpy as np

from .adauction import AdAuctionInstance
from .engine import PackingInstance, Snapshot, Trace
from .objective import CoverageOracle, LinearOracle

__all__ = [
    "FormatError",
    "read_adauction",
    "write_adauction",
    "read_auction_predictions",
    "write_auction_predictions",
    "read_packing",
    "write_packing",
    "read_bit_predictions",
    "write_bit_predictions",
    "read_trace",
    "write_trace",
]


class FormatError(ValueError):
    def __init__(self, path, lineno, msg):
        self.path, self.lineno = path, lineno
        super().__init__(f"{path}:{lineno}: {msg}")


def _lines(path):
    with open(path) as fh:
        for k, raw in enumerate(fh, 1):
            line = raw.strip()
            if line and not line.startswith("#"):
                yield k, line.split()


def _num(tok, path, k, kind=float):
    try:
        return kind(tok)
    except ValueError:
        raise FormatError(path, k, f"expected a number, got {tok!r}") from None


def _pairs(tokens, path, k):
    out = []
    for tok in tokens:
        key, sep, val = tok.partition(":")
        if not sep:
            raise FormatError(path, k, f"expected <id>:<value>, got {tok!r}")
        out.append((_num(key, path, k, int), _num(val, path, k)))
    return out


def _header(lines, path, word):
    try:
        k, tok = next(lines)
    except StopIteration:
        raise FormatError(path, 1, "empty file") from None
    if tok[0] != word or len(tok) != 3:
        raise FormatError(path, k, f"expected header '{word} <m> <n>'")
    return _num(tok[1], path, k, int), _num(tok[2], path, k, int)


def read_adauction(path):
    lines = _lines(path)
    m, n = _header(lines, path, "adauction")
    budgets = np.full(m, np.nan)
    bids = np.zeros((n, m))
    seen = np.zeros(n, dtype=bool)
    last = 1
    for k, tok in lines:
        last = k
        if tok[0] == "budget" and len(tok) == 3:
            i = _num(tok[1], path, k, int)
            if not 1 <= i <= m:
                raise FormatError(path, k, f"buyer {i} outside 1..{m}")
            if not np.isnan(budgets[i - 1]):
                raise FormatError(path, k, f"duplicate budget for buyer {i}")
            budgets[i - 1] = _num(tok[2], path, k)
        elif tok[0] == "item" and len(tok) >= 2:
            e = _num(tok[1], path, k, int)
            if not 0 <= e < n:
                raise FormatError(path, k, f"item {e} outside 0..{n - 1}")
            if seen[e]:
                raise FormatError(path, k, f"duplicate item {e}")
            for i, b in _pairs(tok[2:], path, k):
                if not 1 <= i <= m:
                    raise FormatError(path, k, f"buyer {i} outside 1..{m}")
                bids[e, i - 1] = b
            seen[e] = True
        else:
            raise FormatError(path, k, f"unrecognized record {tok[0]!r}")
    if np.isnan(budgets).any():
        raise FormatError(path, last, f"missing budget for buyer {int(np.flatnonzero(np.isnan(budgets))[0]) + 1}")
    if not seen.all():
        raise FormatError(path, last, f"missing item {int(np.flatnonzero(~seen)[0])}")
    try:
        return AdAuctionInstance(budgets, bids)
    except ValueError as exc:
        raise FormatError(path, last, str(exc)) from None


def write_adauction(path, instance):
    with open(path, "w") as fh:
        fh.write(f"adauction {instance.m} {instance.n}\n")
        for i in range(1, instance.m + 1):
            fh.write(f"budget {i} {float(instance.budgets[i])!r}\n")
        for e in range(instance.n):
            row = instance.bids[e]
            pairs = " ".join(f"{i}:{float(row[i])!r}" for i in np.flatnonzero(row > 0))
            fh.write(f"item {e} {pairs}".rstrip() + "\n")


def read_auction_predictions(path, n, m=None):
    out = np.zeros(n, dtype=int)
    seen = np.zeros(n, dtype=bool)
    for k, tok in _lines(path):
        if len(tok) != 2:
            raise FormatError(path, k, "expected '<item> <buyer|->'")
        e = _num(tok[0], path, k, int)
        if not 0 <= e < n:
            raise FormatError(path, k, f"item {e} outside 0..{n - 1}")
        if tok[1] != "-":
            i = _num(tok[1], path, k, int)
            if i < 1 or (m is not None and i > m):
                raise FormatError(path, k, f"buyer {i} out of range")
            out[e] = i
        seen[e] = True
    if not seen.all():
        raise FormatError(path, 0, f"no prediction for item {int(np.flatnonzero(~seen)[0])}")
    return out


def write_auction_predictions(path, assignment):
    with open(path, "w") as fh:
        for e, i in enumerate(np.asarray(assignment, dtype=int)):
            fh.write(f"{e} {i if i else '-'}\n")


def read_packing(path):
    lines = _lines(path)
    m, n = _header(lines, path, "packing")
    cols = np.zeros((n, m))
    kind, universe = None, 0
    weights = np.zeros(n)
    point_w = None
    covers = [[] for _ in range(n)]
    d = rho = None
    last = 1
    for k, tok in lines:
        last = k
        head = tok[0]
        if head == "bounds" and len(tok) == 3:
            d, rho = _num(tok[1], path, k, int), _num(tok[2], path, k)
        elif head == "objective" and len(tok) >= 2:
            kind = tok[1]
            if kind == "coverage":
                if len(tok) != 3:
                    raise FormatError(path, k, "expected 'objective coverage <U>'")
                universe = _num(tok[2], path, k, int)
                point_w = np.ones(universe)
            elif kind != "linear":
                raise FormatError(path, k, f"unknown objective {kind!r}")
        elif head in ("weight", "cover", "col", "point") and len(tok) >= 2:
            idx = _num(tok[1], path, k, int)
            if head == "point":
                if kind != "coverage" or not 0 <= idx < universe or len(tok) != 3:
                    raise FormatError(path, k, "bad point record")
                point_w[idx] = _num(tok[2], path, k)
                continue
            if not 0 <= idx < n:
                raise FormatError(path, k, f"element {idx} outside 0..{n - 1}")
            if head == "weight":
                if kind != "linear" or len(tok) != 3:
                    raise FormatError(path, k, "weight record needs 'objective linear'")
                weights[idx] = _num(tok[2], path, k)
            elif head == "cover":
                if kind != "coverage":
                    raise FormatError(path, k, "cover record needs 'objective coverage'")
                covers[idx] = [_num(t, path, k, int) for t in tok[2:]]
            else:
                for i, b in _pairs(tok[2:], path, k):
                    if not 0 <= i < m:
                        raise FormatError(path, k, f"resource {i} outside 0..{m - 1}")
                    cols[idx, i] = b
        else:
            raise FormatError(path, k, f"unrecognized record {head!r}")
    try:
        if kind == "linear":
            oracle = LinearOracle(weights)
        elif kind == "coverage":
            oracle = CoverageOracle(universe, covers, point_w)
        else:
            raise ValueError("missing objective record")
        return PackingInstance(cols, oracle, d=d, rho=rho, m=m)
    except ValueError as exc:
        raise FormatError(path, last, str(exc)) from None


def write_packing(path, instance, bounds=True):
    oracle = instance.oracle
    with open(path, "w") as fh:
        fh.write(f"packing {instance.m} {instance.n}\n")
        if bounds:
            fh.write(f"bounds {instance.d} {float(instance.rho)!r}\n")
        if isinstance(oracle, LinearOracle):
            fh.write("objective linear\n")
            for e, w in enumerate(oracle.weights):
                fh.write(f"weight {e} {float(w)!r}\n")
        elif isinstance(oracle, CoverageOracle):
            fh.write(f"objective coverage {oracle.universe_size}\n")
            for u, w in enumerate(oracle.point_weights):
                fh.write(f"point {u} {float(w)!r}\n")
            for e, pts in enumerate(oracle.covers):
                fh.write(f"cover {e} {' '.join(map(str, pts))}".rstrip() + "\n")
        else:
            raise TypeError(f"cannot serialize oracle {oracle!r}")
        for e in range(instance.n):
            col = instance.columns[e]
            pairs = " ".join(f"{i}:{float(col[i])!r}" for i in np.flatnonzero(col > 0))
            fh.write(f"col {e} {pairs}".rstrip() + "\n")


def read_bit_predictions(path, n):
    out = np.zeros(n, dtype=int)
    for k, tok in _lines(path):
        if len(tok) != 2 or tok[1] not in ("0", "1"):
            raise FormatError(path, k, "expected '<element> <0|1>'")
        e = _num(tok[0], path, k, int)
        if not 0 <= e < n:
            raise FormatError(path, k, f"element {e} outside 0..{n - 1}")
        out[e] = int(tok[1])
    return out


def write_bit_predictions(path, bits):
    with open(path, "w") as fh:
        for e, b in enumerate(np.asarray(bits, dtype=int)):
            fh.write(f"{e} {b}\n")


def _vec(v):
    return ",".join(repr(float(a)) for a in v)


def _fields(tokens, path, k):
    out = {}
    for tok in tokens:
        key, sep, val = tok.partition("=")
        if not sep:
            raise FormatError(path, k, f"expected key=value, got {tok!r}")
        out[key] = val
    return out


def _parse_vec(s, path, k):
    return np.array([_num(t, path, k) for t in s.split(",")]) if s else np.zeros(0)


def write_trace(path, trace):
    with open(path, "w") as fh:
        fh.write(f"trace packing m={trace.m} d={trace.d} rho_bar={trace.rho_bar!r} "
                 f"lam={trace.lam!r} mu={trace.mu!r} eta={trace.eta!r}\n")
        flushed = set()
        finals = {e: (y, x) for e, y, x in trace.finals}
        order = []
        for snap in trace.snapshots:
            e = snap.element
            if e not in flushed:
                if order:
                    prev = order[-1]
                    if prev in finals:
                        y, x = finals[prev]
                        fh.write(f"final {prev} y={y!r} x={x!r}\n")
                flushed.add(e)
                order.append(e)
                fh.write(f"col {e} pred={trace.preds.get(e, 0)} b={_vec(trace.columns[e])} "
                         f"bbar={_vec(trace.scaled[e])}\n")
            fh.write(f"step {e} y={snap.y_e!r} grad={snap.grad!r} alpha={_vec(snap.alpha)}\n")
        if order and order[-1] in finals:
            y, x = finals[order[-1]]
            fh.write(f"final {order[-1]} y={y!r} x={x!r}\n")


def read_trace(path):
    lines = _lines(path)
    try:
        k, tok = next(lines)
    except StopIteration:
        raise FormatError(path, 1, "empty trace") from None
    if tok[:2] != ["trace", "packing"]:
        raise FormatError(path, k, "expected 'trace packing ...' header")
    h = _fields(tok[2:], path, k)
    try:
        trace = Trace(m=int(h["m"]), d=int(h["d"]), rho_bar=float(h["rho_bar"]),
                      lam=float(h["lam"]), mu=float(h["mu"]), eta=float(h["eta"]))
    except (KeyError, ValueError) as exc:
        raise FormatError(path, k, f"bad header field: {exc}") from None
    for k, tok in lines:
        if len(tok) < 2:
            raise FormatError(path, k, "truncated record")
        e = _num(tok[1], path, k, int)
        f = _fields(tok[2:], path, k)
        try:
            if tok[0] == "col":
                trace.columns[e] = _parse_vec(f["b"], path, k)
                trace.scaled[e] = _parse_vec(f["bbar"], path, k)
                trace.preds[e] = int(f["pred"])
            elif tok[0] == "step":
                if e not in trace.scaled:
                    raise FormatError(path, k, f"step for element {e} before its col record")
                trace.snapshots.append(Snapshot(e, _num(f["y"], path, k), _num(f["grad"], path, k),
                                                _parse_vec(f["alpha"], path, k)))
            elif tok[0] == "final":
                trace.finals.append((e, _num(f["y"], path, k), _num(f["x"], path, k)))
            else:
                raise FormatError(path, k, f"unrecognized record {tok[0]!r}")
        except KeyError as exc:
            raise FormatError(path, k, f"missing field {exc}") from None
    return trace
