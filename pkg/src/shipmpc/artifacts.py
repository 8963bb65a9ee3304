"""CSV and text artifacts, written atomically.

Schemas (header row always present, numbers as ``%.15g``):

trace.csv
    ``time_s, v_g, i_g, i_ess, v_ceq, soc, p_load_w, p_gen_cmd_w,
    p_batt_cmd_w, p_gen_real_w, p_batt_real_w, v_gin_cmd``
dispatch.csv
    ``k, t_s, p_gen_w, p_batt_w, p_load_forecast_w, mismatch_w``
    (``k`` is 1-based, ``t_s`` the start of the step)
metrics.txt / metrics.csv
    ``key = value`` lines, and a header plus one data row.
sweep.csv
    ``lambda`` followed by the metrics columns and ``error``.
"""

from __future__ import annotations

import io
import os
import tempfile

import numpy as np

from .sim import TRACE_COLUMNS

__all__ = ["atomic_write_text", "format_number", "trace_csv", "dispatch_csv", "metrics_text",
           "metrics_csv", "sweep_csv", "DISPATCH_COLUMNS"]

DISPATCH_COLUMNS = ("k", "t_s", "p_gen_w", "p_batt_w", "p_load_forecast_w", "mismatch_w")


def format_number(v):
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return "%.15g" % float(v)


def atomic_write_text(path, text):
    """Write ``text`` to ``path`` via a temp file in the same directory and ``os.replace``."""
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=d)
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _table(header, columns):
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    cols = [np.asarray(c) for c in columns]
    fmt = [(lambda x: str(int(x))) if np.issubdtype(c.dtype, np.integer)
           else (lambda x: "%.15g" % x) for c in cols]
    for row in zip(*cols):
        buf.write(",".join(f(x) for f, x in zip(fmt, row)) + "\n")
    return buf.getvalue()


def trace_csv(trace, every=1):
    """Trace table; ``every`` keeps one plant sample in ``every`` (the last is always kept)."""
    cols = trace.columns()
    n = trace.time.shape[0]
    idx = np.arange(0, n, max(int(every), 1))
    if idx[-1] != n - 1:
        idx = np.append(idx, n - 1)
    return _table(TRACE_COLUMNS, [np.asarray(cols[c])[idx] for c in TRACE_COLUMNS])


def dispatch_csv(p_gen, p_batt, forecast, step_ts):
    p_gen = np.asarray(p_gen, dtype=float)
    p_batt = np.asarray(p_batt, dtype=float)
    forecast = np.asarray(forecast, dtype=float)
    h = p_gen.shape[0]
    k = np.arange(1, h + 1)
    return _table(DISPATCH_COLUMNS, [k, (k - 1) * float(step_ts), p_gen, p_batt, forecast,
                                     p_gen + p_batt - forecast])


def metrics_text(m):
    return "".join(f"{k} = {format_number(v)}\n" for k, v in m.as_dict().items())


def metrics_csv(m):
    d = m.as_dict()
    return ",".join(d) + "\n" + ",".join(format_number(v) for v in d.values()) + "\n"


def sweep_csv(rows, metric_keys):
    buf = io.StringIO()
    buf.write(",".join(["lambda", *metric_keys, "error"]) + "\n")
    for r in rows:
        if r.metrics is None:
            vals = ["nan"] * len(metric_keys)
        else:
            d = r.metrics.as_dict()
            vals = [format_number(d[k]) for k in metric_keys]
        err = (r.error or "").replace(",", ";").replace("\n", " ")
        buf.write(",".join([format_number(r.lambda_), *vals, err]) + "\n")
    return buf.getvalue()
