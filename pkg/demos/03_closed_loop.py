"""
Closed loop against a local endpoint
====================================

Build a desk-scale corpus, start a local chat-completion server that answers
from the ground truth, run both evaluation tasks through the CLI, and print
the reports.  A perfect responder should score BLEU-4 1.0 and 100% accuracy.
"""
import tempfile
from pathlib import Path

from diagcap.cli import main
from diagcap.mock import MockEndpoint, constant_responder, oracle_responder

root = Path(tempfile.mkdtemp())
assert main(["build", "--out", str(root)]) == 0
corpus = root / "desk"
assert main(["validate", "--corpus", str(corpus)]) == 0

with MockEndpoint(oracle_responder(corpus)) as server:
    for task in ("caption", "vqa"):
        print(f"\n== {task}: oracle ==")
        main(["query", "--corpus", str(corpus), "--endpoint", server.base_url, "--task", task,
              "--out", str(root / "runs" / f"oracle-{task}")])
    print(f"\npeak concurrent requests seen by the server: {server.max_in_flight}")

# A responder that always says the same thing should land near chance.
with MockEndpoint(constant_responder("Answer: A")) as server:
    print("\n== vqa: always A ==")
    main(["query", "--corpus", str(corpus), "--endpoint", server.base_url, "--task", "vqa",
          "--out", str(root / "runs" / "constant-vqa")])

# Reports are recomputed offline from the saved run, no network needed.
print("\n== rescoring a saved run ==")
main(["score", str(root / "runs" / "oracle-vqa"), "--corpus", str(corpus)])
