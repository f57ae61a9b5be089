"""Regenerate the checked-in sample datasets under src/codelm/data/.

Everything is derived from one fixed seed so reruns are byte-identical.
The corpus sample holds 1,000 function records: a minilang-parseable
slice (used by the syntax/dataflow metrics) plus java-flavored functions
that exercise every codec glyph.  Task samples, the sample manifest, and
the golden evaluate report are produced from the same pools.

Run from the repository root:  python3 tools/make_bundled_data.py
"""

from __future__ import annotations

import json
import os
import random
import shutil
import sys
import tempfile

REPO = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
sys.path.insert(0, os.path.join(REPO, "src"))
sys.path.insert(0, os.path.join(REPO, "tests"))

from gen_minilang import _Budget, gen_function  # noqa: E402
from codelm import cli, minilang  # noqa: E402

DATA_DIR = os.path.join(REPO, "src", "codelm", "data")
SEED = 20260819

NOUNS = [
    "buffer", "index", "cache", "record", "token", "matrix", "queue", "node",
    "stream", "bucket", "window", "offset", "header", "payload", "cursor", "digest",
]
VERBS = [
    "returns", "computes", "builds", "scans", "merges", "filters", "encodes",
    "splits", "validates", "rotates", "counts", "normalizes",
]
QUALIFIERS = [
    "for the given key", "in place", "using a sliding window", "without copying",
    "across all shards", "for each entry", "at the requested depth",
    "ignoring duplicates", "in reverse order", "before the first match",
]

TYPES = ["int", "long", "boolean", "double", "String", "byte[]", "List<String>", "Map<String, Integer>"]


def make_doc(rng: random.Random) -> str:
    noun, verb, qual = rng.choice(NOUNS), rng.choice(VERBS), rng.choice(QUALIFIERS)
    roll = rng.random()
    # polarity words appear often, in both sentence-initial and interior
    # positions, so the subword trainer learns them as whole pieces
    if roll < 0.1:
        return f"positive when the {noun} {verb}, negative otherwise"
    if roll < 0.2:
        return f"negative if the {noun} is empty, positive after the first match"
    if roll < 0.3:
        return f"{verb} the positive {noun} and drops the negative one"
    return f"{verb} the {noun} {qual}"


def java_function(rng: random.Random, index: int) -> str:
    """A small java-flavored function; templates rotate so that every
    codec glyph shows up across the corpus."""
    name = f"{rng.choice(['get', 'put', 'scan', 'fold', 'mark'])}{rng.choice(NOUNS).title()}{index % 97}"
    typ = rng.choice(TYPES)
    kind = rng.randrange(8)
    if kind == 0:
        return (
            f"static {typ} {name}(int[] data, int n) {{\n"
            f"    int acc = 0;\n"
            f"    for (int i = 0; i < n; i++) {{ acc += data[i] ^ (acc >> {rng.randrange(1, 5)}); }}\n"
            f"    return acc;\n"
            f"}}"
        )
    if kind == 1:
        return (
            f"public String {name}(String path) {{\n"
            f"    return path.replace(\"\\\\\", \"/\") + \"$suffix{index % 13}\";\n"
            f"}}"
        )
    if kind == 2:
        return (
            f"List<String> {name}(Map<String, Integer> m) {{\n"
            f"    return m.keySet().stream().filter(k -> m.get(k) > {rng.randrange(10)})"
            f".collect(Collectors.toList());\n"
            f"}}"
        )
    if kind == 3:
        return (
            f"int {name}(int flags) {{\n"
            f"    int mask = ~(flags | {rng.randrange(2, 64)});\n"
            f"    return mask ^ 0x{rng.randrange(16, 255):x};\n"
            f"}}"
        )
    if kind == 4:
        return (
            f"boolean {name}(String s) {{\n"
            f"    return s.matches(\"^[a-z{index % 10}]+$\") || s.contains(\"`tick`\");\n"
            f"}}"
        )
    if kind == 5:
        return (
            f"static double {name}(double[] xs) {{\n"
            f"    double total = 0.0;\n"
            f"    for (double x : xs) {{ total += x * {rng.randrange(2, 9)}.0; }}\n"
            f"    return total / (xs.length + 1e-9);\n"
            f"}}"
        )
    if kind == 6:
        return (
            f"String {name}(String home) {{\n"
            f"    return home.startsWith(\"~\") ? home : \"~{rng.choice(NOUNS)}\" + home;\n"
            f"}}"
        )
    return (
        f"int {name}(int a, int b) {{\n"
        f"    int cache${index % 7} = a % (b + {rng.randrange(1, 9)});\n"
        f"    return cache${index % 7} <= b ? a : b;\n"
        f"}}"
    )


def minilang_function(rng: random.Random) -> str:
    node = gen_function(rng, _Budget(branches=5))
    return minilang.pretty_print(node)


def corpus_records(rng: random.Random, total: int, minilang_count: int) -> list[dict]:
    records = []
    for i in range(total):
        if i % (total // minilang_count) == 0 and sum(
            1 for r in records if r["id"].startswith("ml-")
        ) < minilang_count:
            rid = f"ml-{i:04d}"
            code = minilang_function(rng)
        else:
            rid = f"cs-{i:04d}"
            code = java_function(rng, i)
        record = {"id": rid, "language": "java", "code": code}
        if rng.random() > 0.05:
            record["doc"] = make_doc(rng)
        records.append(record)
    return records


def write_jsonl(path: str, rows: list[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False, sort_keys=True) + "\n")


def main() -> None:
    rng = random.Random(SEED)
    os.makedirs(DATA_DIR, exist_ok=True)

    corpus = corpus_records(rng, total=1000, minilang_count=150)
    write_jsonl(os.path.join(DATA_DIR, "corpus_sample.jsonl"), corpus)

    github = [
        {"id": f"gh-{i:03d}", "language": "java", "code": java_function(rng, i + 5000)}
        for i in range(200)
    ]
    write_jsonl(os.path.join(DATA_DIR, "github_sample.jsonl"), github)

    with open(os.path.join(DATA_DIR, "nl_sample.txt"), "w", encoding="utf-8") as fh:
        for _ in range(100):
            fh.write(make_doc(rng) + "\n")

    # summarization: mostly java-with-doc, plus language/doc skips to exercise counters
    summarization = []
    for i in range(120):
        summarization.append(
            {
                "id": f"sum-{i:03d}",
                "language": "java",
                "code": java_function(rng, i + 9000),
                "doc": make_doc(rng),
            }
        )
    for i in range(6):
        summarization.append(
            {
                "id": f"sum-py-{i}",
                "language": "python",
                "code": f"def f{i}(x):\n    return x + {i}",
                "doc": make_doc(rng),
            }
        )
    for i in range(8):
        summarization.append(
            {"id": f"sum-nodoc-{i}", "language": "java", "code": java_function(rng, i + 9500)}
        )
    rng.shuffle(summarization)
    write_jsonl(os.path.join(DATA_DIR, "task_summarization.jsonl"), summarization)

    generation = []
    for i in range(100):
        code = minilang_function(rng)
        row = {"id": f"gen-{i:03d}", "nl": make_doc(rng), "code": code}
        if i % 4 == 0:
            row["env"] = f"int {rng.choice(NOUNS)} ; float {rng.choice(NOUNS)} ;"
        generation.append(row)
    write_jsonl(os.path.join(DATA_DIR, "task_generation.jsonl"), generation)

    refinement_small, refinement_medium = [], []
    for i in range(140):
        fixed = minilang_function(rng)
        buggy = fixed.replace("+", "-", 1) if "+" in fixed else fixed.replace("return", "return 0 +", 1)
        row = {"id": f"ref-{i:03d}", "buggy": buggy, "fixed": fixed}
        (refinement_small if i < 80 else refinement_medium).append(row)
    write_jsonl(os.path.join(DATA_DIR, "task_refinement_small.jsonl"), refinement_small)
    write_jsonl(os.path.join(DATA_DIR, "task_refinement_medium.jsonl"), refinement_medium)

    defect = []
    for i in range(100):
        code = minilang_function(rng)
        label = 1 if "/" in code or "%" in code else 0
        defect.append({"id": f"vul-{i:03d}", "code": code, "label": label})
    write_jsonl(os.path.join(DATA_DIR, "task_defect.jsonl"), defect)

    manifest_lines = [
        "# expected record counts for the bundled samples",
        "corpus_records=1000",
        "corpus_minilang=150",
        "github_records=200",
        "nl_lines=100",
        "summarization_ingested=134",
        "summarization_emitted=120",
        "summarization_skipped_language=6",
        "summarization_skipped_missing_doc=8",
        "generation_emitted=100",
        "refinement_small_emitted=80",
        "refinement_medium_emitted=60",
        f"defect_emitted=100",
        f"defect_positive={sum(1 for r in defect if r['label'] == 1)}",
    ]
    with open(os.path.join(DATA_DIR, "manifest"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(manifest_lines) + "\n")

    # golden predictions: deterministic perturbations of the generation targets
    from codelm import codec

    golden_rows = []
    for i, row in enumerate(generation):
        text = row["code"]
        if i % 3 == 0:
            pred = text
        elif i % 3 == 1:
            pred = text.replace("return", "return 1 +", 1)
        else:
            words = text.split()
            pred = " ".join(words[:-2]) if len(words) > 4 else text
        golden_rows.append({"id": row["id"], "prediction": pred})
    golden_pred_path = os.path.join(DATA_DIR, "golden_predictions.jsonl")
    write_jsonl(golden_pred_path, golden_rows)

    # golden report: run the real evaluate subcommand and keep its output
    tmp = tempfile.mkdtemp(prefix="golden-eval-")
    try:
        code = cli.dispatch(
            [
                "evaluate",
                "--out-dir", tmp,
                "--set", "evaluate.task=generation",
                "--set", f"evaluate.predictions={golden_pred_path}",
                "--set", f"evaluate.references={os.path.join(DATA_DIR, 'task_generation.jsonl')}",
            ]
        )
        if code != 0:
            raise SystemExit(f"golden evaluate run failed with exit code {code}")
        shutil.copyfile(
            os.path.join(tmp, "report.json"), os.path.join(DATA_DIR, "golden_report.json")
        )
    finally:
        shutil.rmtree(tmp, ignore_errors=True)

    names = sorted(os.listdir(DATA_DIR))
    print("wrote", len(names), "files to", DATA_DIR)
    for name in names:
        print(" ", name, os.path.getsize(os.path.join(DATA_DIR, name)), "bytes")


if __name__ == "__main__":
    main()
