#!/usr/bin/env python3
"""Run every CLI subcommand on small inputs and validate the JSON it writes."""

import json
import struct
import subprocess
import sys
import tempfile
from pathlib import Path

import jsonschema
import numpy as np
from referencing import Registry, Resource

cli, root = Path(sys.argv[1]), Path(sys.argv[2])
schemas = {p.name: json.loads(p.read_text()) for p in (root / "schemas").glob("*.json")}
registry = Registry().with_resources(
    (s["$id"], Resource.from_contents(s)) for s in schemas.values())
merges = str(root / "data" / "clip_bpe_merges.txt")


def validate(path, schema_name, lines=False):
    schema = schemas[schema_name]
    validator = jsonschema.Draft202012Validator(schema, registry=registry)
    docs = [json.loads(l) for l in path.read_text().splitlines() if l] if lines else [json.loads(path.read_text())]
    for d in docs:
        validator.validate(d)
    print(f"ok {path.name} ({schema_name}, {len(docs)} doc(s))")


def ltxt(path, rows, cols, seed):
    data = np.random.default_rng(seed).standard_normal((rows, cols)).astype("<f4")
    path.write_bytes(b"LTXT" + struct.pack("<IQQ", 1, rows, cols) + data.tobytes())


def run(*args):
    subprocess.run([str(cli), *map(str, args)], check=True, capture_output=True)


with tempfile.TemporaryDirectory() as tmp:
    t = Path(tmp)
    (t / "coco.txt").write_text("a man in a white shirt\nred car\nthe dog on the left\n\nred car\n")
    (t / "refs.jsonl").write_text('{"text": "left zebra", "source": "refcoco"}\n'
                                  '{"text": "man wearing a hat", "source": "refcoco"}\n')
    ltxt(t / "emb.ltxt", 200, 16, 1)
    ltxt(t / "pos.ltxt", 32, 16, 2)
    corpus = ["--corpus", t / "coco.txt", t / "refs.jsonl"]

    run("tokenize", "--merges", merges, "--context", 16, "--corpus", t / "coco.txt", "--out", t / "tok" / "t.jsonl")
    validate(t / "tok" / "t.jsonl", "tokenize_line.schema.json", lines=True)
    run("audit", "--merges", merges, *corpus, "--out", t / "audit" / "a.json")
    validate(t / "audit" / "a.json", "audit.schema.json")
    run("svd", "--matrix", t / "emb.ltxt", "--center", "--out", t / "svd" / "s.json")
    validate(t / "svd" / "s.json", "spectrum.schema.json")
    run("possim", "--matrix", t / "pos.ltxt", "--out", t / "pos" / "p.json")
    validate(t / "pos" / "p.json", "positional_similarity.schema.json")
    for method in ("both", "twonn", "mle"):
        run("id", "--matrix", t / "emb.ltxt", "--method", method, "--out", t / f"id_{method}" / "i.json")
        validate(t / f"id_{method}" / "i.json", "intrinsic_dimension.schema.json")
    run("probe", "--d", 16, "--keys", 8, "--seeds", 5, "--out", t / "probe" / "p.json")
    validate(t / "probe" / "p.json", "probe.schema.json")
    run("distill", "--merges", merges, "--synthetic", 24, "--steps", 5, "--batch", 4,
        "--student-width", 8, "--student-heads", 1, "--teacher-width", 16, "--out", t / "distill")
    validate(t / "distill" / "report.json", "distill.schema.json")
    run("report", "--merges", merges, *corpus, "--matrix", t / "emb.ltxt", "--positional", t / "pos.ltxt",
        "--out", t / "report" / "summary.json")
    validate(t / "report" / "summary.json", "summary.schema.json")

    for sub in ("tok", "audit", "svd", "pos", "id_both", "probe", "distill", "report"):
        validate(t / sub / "manifest.json", "manifest.schema.json")

    # The schemas must also reject things.
    bad = json.loads((t / "report" / "summary.json").read_text())
    bad["audit"]["contexts"][0]["info_density"] = 1.5
    try:
        jsonschema.Draft202012Validator(schemas["summary.schema.json"], registry=registry).validate(bad)
        sys.exit("summary schema accepted info_density > 1")
    except jsonschema.ValidationError:
        print("ok rejected malformed summary")
