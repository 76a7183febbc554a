"""Capture real service responses into tests/fixtures/session.json.

The workbench test suite runs against these recorded payloads instead of
a live server, so every byte the tests assert on originated in the
actual service. Re-run after any change to the service payload schema:

    python3 frontend/scripts/capture_fixture.py

Trains the default desk model once (a couple of minutes on one core).
"""

import itertools
import json
import tempfile
import warnings
from pathlib import Path

import numpy as np

warnings.filterwarnings(
    "ignore", message="Using `httpx` with `starlette.testclient` is deprecated")

from fastapi.testclient import TestClient

from protoscope.backbone import BackboneConfig
from protoscope.metrics import normalized_entropy
from protoscope.model import ModelConfig
from protoscope.service import create_app
from protoscope.synthetic import SynthSpec, generate_corpus
from protoscope.train import TrainConfig, restore_model, train

OUT = Path(__file__).resolve().parent.parent / "tests" / "fixtures" / "session.json"

root = Path(tempfile.mkdtemp(prefix="workbench-fixture-"))
print("generating corpus ...")
corpus = generate_corpus(SynthSpec(out_dir=str(root / "corpus"), seed=0))
print("training the default desk model (this is the slow part) ...")
result = train(corpus, TrainConfig(seed=0),
               ModelConfig(class_names=corpus.class_names,
                           backbone=BackboneConfig()),
               out_dir=str(root / "run"))
model = restore_model(result.best)

pred = model.predict(corpus.images("test"))
entropy = normalized_entropy(pred.expected_p)
test_ids = corpus.ids("test")
accept_id = test_ids[int(np.argmin(entropy))]
assert float(entropy.min()) < 0.7, "no test case falls under the threshold"
reject_id = corpus.ids("ood")[0]

app = create_app(checkpoint_path=result.best_path,
                 corpus_dir=str(root / "corpus"),
                 state_dir=str(root / "state"), top_n=3, repr_count=5)

with TestClient(app) as client:
    def predict(case_id):
        r = client.post("/predict", json={"corpus_id": case_id})
        assert r.status_code == 200, r.text
        return r.json()

    accept = predict(accept_id)
    assert accept["decision"]["status"] == "accept"
    reject = predict(reject_id)
    assert reject["decision"]["status"] == "reject"

    interventions = {}
    for bits in itertools.product((0, 1), repeat=len(accept["mask"])):
        fresh = predict(accept_id)
        r = client.post(f"/session/{fresh['session_id']}/intervene",
                        json={"mask": list(bits)})
        assert r.status_code == 200, r.text
        body = r.json()
        interventions["".join(map(str, bits))] = {
            "tau": body["tau_current"], "p": body["p_current"]}

    assert interventions["1" * len(accept["mask"])]["p"] == accept["p_current"], \
        "all-ones intervention must reproduce the original prediction"

    fixture = {
        "captured_from": "protoscope service over the default desk model",
        "class_names": accept["explanation"]["class_names"],
        "healthz": client.get("/healthz").json(),
        "cases_test": client.get("/cases", params={"split": "test",
                                                   "limit": 8}).json(),
        "cases_ood": client.get("/cases", params={"split": "ood",
                                                  "limit": 4}).json(),
        "accept": accept,
        "reject": reject,
        "interventions": interventions,
        "prototypes": client.get("/prototypes").json(),
    }

OUT.parent.mkdir(parents=True, exist_ok=True)
OUT.write_text(json.dumps(fixture, indent=1, sort_keys=True) + "\n")
print(f"wrote {OUT} ({OUT.stat().st_size} bytes)")
print(f"accept case {accept_id} entropy {entropy.min():.3f}; "
      f"reject case {reject_id}")
