"""Rebuild data/tiny_shakespeare.txt from the Project Gutenberg play texts
shipped in the `shakespeare` 0.6 sdist on PyPI (shksprdata/texts/*_gut.txt).

    python3 scripts/build_shakespeare_corpus.py /path/to/shksprdata/texts data/tiny_shakespeare.txt
"""

import argparse
import re
from pathlib import Path

PLAYS = [
    "coriolanus",
    "richard_iii",
    "winters_tale",
    "richard_ii",
    "henry_vi_part_3",
    "romeo_and_juliet",
    "taming_of_the_shrew",
    "measure_for_measure",
    "tempest",
    "henry_vi_part_2",
    "julius_caesar",
    "henry_iv_part_1",
]

MAX_CHARS = 1115394


def clean(text):
    text = text.replace("\r", "")
    text = text[text.find("ACT I.") :]
    text = re.sub(r"\[[^\]]*\]", "", text)
    lines = []
    for line in text.split("\n"):
        s = line.strip()
        if re.match(r"^(ACT|SCENE) [IVXL]+\.", s) or s.startswith("SCENE"):
            continue
        speaker = re.match(r"^([A-Z][A-Z ',\-]+)\.$", s)
        if speaker and len(s) < 40:
            lines.append(speaker.group(1).title() + ":")
            continue
        lines.append(s)
    out = re.sub(r"\n{3,}", "\n\n", "\n".join(lines))
    return "".join(c for c in out if ord(c) < 128).strip() + "\n\n"


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("texts", type=Path)
    ap.add_argument("out", type=Path)
    args = ap.parse_args()
    body = "".join(clean((args.texts / f"{p}_gut.txt").read_text(encoding="latin-1")) for p in PLAYS)
    body = body[:MAX_CHARS]
    args.out.write_text(body)
    print(len(body), len(set(body)))


if __name__ == "__main__":
    main()
