#!/usr/bin/env python3
"""Writes tests/data/tokenize_cases.jsonl using shlex (POSIX mode) as the oracle.

Each line: {"line": ..., "tokens": [...]} or {"line": ..., "error": true}.
"""
import json
import random
import shlex
import sys

ALPHABET = ["a", "b", "n", "m", "p", "1", "0", "-", ".", "/", "=", ":", "_", " ", " ", "\t",
            "'", '"', "\\", "nmap", "-sV", "10.0.0.5", "host"]

FIXED = [
    'nmap -sV "10.0.0.5"',
    "a 'b c' d",
    'a "unclosed',
    "sudo nmap -p- host",
    "ping -c 1 10.0.0.1",
    r'a\ b c',
    r'"a\"b" c',
    r"'a\b'",
    "x '' y",
    'x "" y',
    "trailing\\",
]


def case(line):
    try:
        return {"line": line, "tokens": shlex.split(line, posix=True)}
    except ValueError:
        return {"line": line, "error": True}


def main(path, n=200, seed=20240501):
    rng = random.Random(seed)
    cases = [case(s) for s in FIXED]
    while len(cases) < n:
        line = "".join(rng.choice(ALPHABET) for _ in range(rng.randint(1, 12)))
        if not line.strip():
            continue
        cases.append(case(line))
    with open(path, "w", encoding="utf-8") as out:
        for c in cases:
            out.write(json.dumps(c, ensure_ascii=False) + "\n")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "tests/data/tokenize_cases.jsonl")
