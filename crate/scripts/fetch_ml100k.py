#!/usr/bin/env python3
"""Materialize the MovieLens 100K raw layout (u.data, u.user, u.item) under data/ml-100k.

Tries the GroupLens archive first. When that host is unreachable, rebuilds the
three files from the copy of ML-100K that ships inside the RecBole wheel on PyPI
(atomic-file format: same ratings, users and items, genre names instead of flags).
"""

import argparse
import io
import os
import subprocess
import sys
import tempfile
import urllib.request
import zipfile

GROUPLENS = "https://files.grouplens.org/datasets/movielens/ml-100k.zip"
GENRES = [
    "unknown", "Action", "Adventure", "Animation", "Children's", "Comedy", "Crime",
    "Documentary", "Drama", "Fantasy", "Film-Noir", "Horror", "Musical", "Mystery",
    "Romance", "Sci-Fi", "Thriller", "War", "Western",
]
WANTED = ("u.data", "u.user", "u.item")


def from_grouplens(out):
    with urllib.request.urlopen(GROUPLENS, timeout=30) as resp:
        blob = resp.read()
    with zipfile.ZipFile(io.BytesIO(blob)) as z:
        for name in WANTED:
            with open(os.path.join(out, name), "wb") as f:
                f.write(z.read("ml-100k/" + name))


def from_recbole(out):
    with tempfile.TemporaryDirectory() as tmp:
        subprocess.run(
            [sys.executable, "-m", "pip", "download", "--no-deps", "-q", "recbole==1.2.1", "-d", tmp],
            check=True,
        )
        wheel = next(os.path.join(tmp, f) for f in os.listdir(tmp) if f.endswith(".whl"))
        z = zipfile.ZipFile(wheel)
        read = lambda ext: z.read(f"recbole/dataset_example/ml-100k/ml-100k.{ext}").decode("latin-1").splitlines()[1:]

        with open(os.path.join(out, "u.data"), "w", encoding="latin-1") as f:
            for line in read("inter"):
                f.write(line + "\n")

        with open(os.path.join(out, "u.user"), "w", encoding="latin-1") as f:
            for line in read("user"):
                f.write("|".join(line.split("\t")) + "\n")

        with open(os.path.join(out, "u.item"), "w", encoding="latin-1") as f:
            for line in read("item"):
                item_id, title, year, genres = line.split("\t")
                names = set(genres.split(" "))
                unknown = not year.isdigit()
                flags = "|".join("1" if g in names else "0" for g in GENRES)
                if unknown:
                    f.write(f"{item_id}|unknown||||{flags}\n")
                else:
                    f.write(f"{item_id}|{title} ({year})|01-Jan-{year}|||{flags}\n")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default=os.path.join(os.path.dirname(__file__), "..", "data", "ml-100k"))
    args = ap.parse_args()
    os.makedirs(args.out, exist_ok=True)
    try:
        from_grouplens(args.out)
        print("fetched from grouplens")
    except Exception as err:  # network blocked, DNS failure, ...
        print(f"grouplens unavailable ({err}); rebuilding from the RecBole wheel")
        from_recbole(args.out)
    print(f"wrote {', '.join(WANTED)} to {os.path.abspath(args.out)}")


if __name__ == "__main__":
    main()
