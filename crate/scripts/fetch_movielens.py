#!/usr/bin/env python3
"""Fetch MovieLens 100K and write it as `user<TAB>item<TAB>timestamp`.

Tries the GroupLens archive first, then falls back to the copy bundled in the
RecBole wheel on PyPI (recbole/dataset_example/ml-100k/ml-100k.inter).
Input order is preserved so that same-second ties keep their original order.
"""
import io
import os
import subprocess
import sys
import tempfile
import urllib.request
import zipfile

OUT = os.path.join(os.path.dirname(os.path.abspath(__file__)), "..", "data", "ml-100k.tsv")


def from_grouplens():
    url = "https://files.grouplens.org/datasets/movielens/ml-100k.zip"
    with urllib.request.urlopen(url, timeout=20) as resp:
        z = zipfile.ZipFile(io.BytesIO(resp.read()))
    rows = []
    for line in z.read("ml-100k/u.data").decode().splitlines():
        user, item, _rating, ts = line.split("\t")
        rows.append((user, item, ts))
    return rows


def from_recbole():
    with tempfile.TemporaryDirectory() as tmp:
        subprocess.run(
            [sys.executable, "-m", "pip", "download", "recbole==1.2.1", "--no-deps", "-d", tmp, "-q"],
            check=True,
        )
        wheel = next(f for f in os.listdir(tmp) if f.endswith(".whl"))
        z = zipfile.ZipFile(os.path.join(tmp, wheel))
        text = z.read("recbole/dataset_example/ml-100k/ml-100k.inter").decode()
    rows = []
    for line in text.splitlines()[1:]:
        user, item, _rating, ts = line.split("\t")
        rows.append((user, item, str(int(float(ts)))))
    return rows


def main():
    try:
        rows = from_grouplens()
    except Exception as err:  # noqa: BLE001
        print(f"grouplens unavailable ({err}); using recbole wheel", file=sys.stderr)
        rows = from_recbole()
    os.makedirs(os.path.dirname(OUT), exist_ok=True)
    with open(OUT, "w") as f:
        for r in rows:
            f.write("\t".join(r) + "\n")
    print(f"wrote {len(rows)} interactions to {os.path.normpath(OUT)}")


if __name__ == "__main__":
    main()
