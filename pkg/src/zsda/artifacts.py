"""Small helpers for loss CSVs and other run artifacts."""

import os


def write_loss_csv(path, header, rows, config_hash=""):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w") as fh:
        fh.write(f"# config\t{config_hash}\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")
    return path


def read_loss_csv(path):
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            rows.append(line.split(","))
    header, body = rows[0], rows[1:]
    return header, [[_parse(v) for v in row] for row in body]


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.8g}"
    return str(v)


def _parse(v):
    try:
        return int(v)
    except ValueError:
        try:
            return float(v)
        except ValueError:
            return v
