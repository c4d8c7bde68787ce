"""End-to-end CLI checks: exit codes, subcommand chaining and report schema."""

import json
import pathlib
import subprocess
import sys
import tempfile

import jsonschema

CLI = sys.argv[1]
SCHEMA = json.loads(pathlib.Path(sys.argv[2]).read_text())
FAILURES = []


def run(*args, expect=0):
    proc = subprocess.run([CLI, *map(str, args)], capture_output=True, text=True)
    if proc.returncode != expect:
        FAILURES.append(f"{args[0]}: exit {proc.returncode}, expected {expect}\n{proc.stderr}")
    return proc


def check(cond, what):
    if not cond:
        FAILURES.append(what)


with tempfile.TemporaryDirectory() as tmp:
    tmp = pathlib.Path(tmp)
    config = {
        "data": {"source": "synthetic", "synthetic": {"n": 300, "length": 100, "patch_length": 25}, "seed": 1},
        "tokenizer": {"patch_length": 25},
        "train": {"epochs": 3, "hidden_sizes": [16]},
        "seeds": [1, 2, 3],
        "methods": {"saliency": {}, "integrated_gradients": {"steps": 8},
                    "rise": {"masks": 100}, "lime": {"samples": 100}},
        "evaluation": {"rnd_draws": 2},
        "cache_dir": str(tmp / "cache"),
        "report": str(tmp / "report.json"),
        "csv_dir": str(tmp / "csv"),
    }
    (tmp / "config.json").write_text(json.dumps(config))
    run("pipeline", "--config", tmp / "config.json")
    report = json.loads((tmp / "report.json").read_text())
    try:
        jsonschema.validate(report, SCHEMA)
    except jsonschema.ValidationError as e:
        FAILURES.append(f"report does not match schema: {e.message}")

    # Flags fill in what the config file leaves out; the file wins on conflicts.
    partial = dict(config, report=str(tmp / "report2.json"))
    del partial["seeds"]
    (tmp / "partial.json").write_text(json.dumps(partial))
    run("pipeline", "--config", tmp / "partial.json", "--seeds", 1, 2, 3, "--epochs", 9)
    check((tmp / "report2.json").read_text() == (tmp / "report.json").read_text(),
          "flags did not combine with the config file as expected")

    # Subcommands chained by hand.
    run("synth", "--out-dir", tmp / "syn", "-n", 200, "--length", 100, "--patch-length", 25)
    for split in ("train", "test"):
        run("tokenize", "-i", tmp / "syn" / f"{split}.ndjson", "-o", tmp / f"{split}.tokens.ndjson",
            "--patch-length", 25)
    run("train", "--tokens", tmp / "train.tokens.ndjson", "-o", tmp / "model.json",
        "--vocab-size", 8, "--epochs", 3, "--hidden", 16)
    for method, target in (("saliency", "predicted"), ("lime", "predicted"), ("lime", "label")):
        run("explain", "--model", tmp / "model.json", "--tokens", tmp / "test.tokens.ndjson",
            "-m", method, "--target", target, "--lime-samples", 100,
            "-o", tmp / f"{method}.{target}.ndjson")
    ev = run("evaluate", "--model", tmp / "model.json", "--tokens", tmp / "test.tokens.ndjson",
             "-a", tmp / "saliency.predicted.ndjson", tmp / "lime.predicted.ndjson")
    if ev.returncode == 0:
        out = json.loads(ev.stdout)
        check(set(out["methods"]) == {"saliency", "lime"}, "evaluate output lacks methods")
        check("agreement" in out, "evaluate output lacks agreement")
    ssa = run("ssa", "--train-tokens", tmp / "train.tokens.ndjson", "--tokens", tmp / "test.tokens.ndjson",
              "-a", tmp / "lime.label.ndjson", "--vocab-size", 8)
    if ssa.returncode == 0:
        out = json.loads(ssa.stdout)
        check([r["length"] for r in out["results"]] == [1, 2, 3], "ssa lengths")

    # Exit code 1: invalid input or configuration.
    (tmp / "bad.json").write_text(json.dumps({"seeds": [1, 1]}))
    run("pipeline", "--config", tmp / "bad.json", expect=1)
    (tmp / "typo.json").write_text(json.dumps({"sedes": [1]}))
    run("pipeline", "--config", tmp / "typo.json", expect=1)
    run("train", "--tokens", tmp / "train.tokens.ndjson", "-o", tmp / "m2.json", "--vocab-size", 4, expect=1)
    run("explain", "--model", tmp / "model.json", "--tokens", tmp / "test.tokens.ndjson", "-m", "shap",
        "-o", tmp / "x.ndjson", expect=1)
    run("bogus", expect=1)

    # Exit code 2: a well-formed request that fails while running.
    blocker = tmp / "blocker"
    blocker.write_text("not a directory")
    run("explain", "--model", tmp / "model.json", "--tokens", tmp / "test.tokens.ndjson",
        "-o", blocker / "out.ndjson", expect=2)

if FAILURES:
    print("\n".join(FAILURES))
    sys.exit(1)
print("cli checks passed")
