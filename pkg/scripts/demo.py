"""End-to-end CLI demo on a synthetic benchmark with a mock model.

Writes everything under the given directory (default ./demo) and runs
build-index, query, evaluate and report through the command-line entry point.
"""

import json
import sys
from pathlib import Path

from georag import cli
from georag.synthetic import write_benchmark


def run(*argv):
    print("$ georag " + " ".join(argv))
    code = cli.main(list(argv))
    print(f"(exit {code})\n")
    return code


def main():
    root = Path(sys.argv[1] if len(sys.argv) > 1 else "demo")
    files = write_benchmark(root, n_gallery=2000, n_items=60, dim=32, n_missing=2, seed=1)
    mock = root / "mock.json"
    mock.write_text(json.dumps({"responder": "echo-nearest"}))
    index = str(root / "gallery.idx")

    run("build-index", "--vectors", str(files.gallery_vectors), "--metadata", str(files.gallery_metadata),
        "--out", index)
    run("query", "--index", index, "--embedding", str(files.query_vectors), "--embedding-row", "0",
        "--image", str(root / "images" / "q00000.jpg"), "--mock-script", str(mock), "--verbose")
    run("evaluate", "--manifest", str(files.manifest), "--index", index, "--embeddings", str(files.query_vectors),
        "--mock-script", str(mock), "--out-dir", str(root / "run"), "--format", "markdown,csv,json")
    run("report", "--input", str(root / "run" / "report.json"), "--format", "csv", "--out-dir", str(root / "run"))


if __name__ == "__main__":
    main()
