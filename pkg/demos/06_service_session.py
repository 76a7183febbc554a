"""The decision-support HTTP service, exercised end to end in process.

Trains a miniature model, mounts the service on a test client, and
walks one review session: predict, inspect the displayed prototypes,
toggle one off, record the final label. Restarting the service on the
same state directory proves the session log survives a crash.
"""

import shutil
import tempfile
import warnings
from pathlib import Path

warnings.filterwarnings(
    "ignore", message="Using `httpx` with `starlette.testclient` is deprecated")

from fastapi.testclient import TestClient

from protoscope.backbone import AugmentConfig, BackboneConfig
from protoscope.model import ModelConfig
from protoscope.service import create_app
from protoscope.synthetic import SynthSpec, generate_corpus
from protoscope.train import TrainConfig, train

root = Path(tempfile.mkdtemp(prefix="service-demo-"))
corpus = generate_corpus(SynthSpec(
    out_dir=str(root / "corpus"), seed=7,
    train_per_class=12, val_per_class=4, test_per_class=4, ood_count=8))

print("training a miniature model ...")
result = train(corpus,
               TrainConfig(epochs=4, freeze_epochs=1, batch_size=16, seed=3,
                           augment=AugmentConfig(flip=False, max_rotate_deg=0.0,
                                                 max_brightness=0.0)),
               ModelConfig(class_names=corpus.class_names,
                           backbone=BackboneConfig(), protos_per_class=4),
               out_dir=str(root / "run"))

app_kwargs = dict(checkpoint_path=result.best_path,
                  corpus_dir=str(root / "corpus"),
                  state_dir=str(root / "state"))

with TestClient(create_app(**app_kwargs)) as client:
    health = client.get("/healthz").json()
    print(f"\nhealth: model_loaded={health['model_loaded']} "
          f"bank={health['bank_version']}")

    case_id = corpus.ids("test")[0]
    session = client.post("/predict", json={"corpus_id": case_id}).json()
    sid = session["session_id"]
    print(f"\nsession {sid} for case {session['case_id']}")
    print(f"decision: {session['decision']}")
    print(f"p: {[round(v, 4) for v in session['p_current']]}")
    print("displayed prototypes:")
    for entry in session["explanation"]["top"]:
        print(f"  {entry['prototype']} ({entry['class_name']}) "
              f"contribution {entry['contribution']:.3f}")

    # the reviewer discards the top prototype for this case only
    first = session["explanation"]["top"][0]["prototype"]
    edited = client.post(f"/session/{sid}/intervene",
                         json={"mask": [0, 1, 1]}).json()
    print(f"\nafter discarding {first}: "
          f"p {[round(v, 4) for v in edited['p_current']]}")

    # and records the final call, here the case's true class
    true_name = corpus.class_names[int(corpus.labels("test")[0])]
    labeled = client.post(f"/session/{sid}/label",
                          json={"label": true_name}).json()
    print(f"recorded label: {labeled['human_label']}")
    print(f"event log: {[e['type'] for e in labeled['events']]}")

# a fresh process on the same state directory replays the log
with TestClient(create_app(**app_kwargs)) as client:
    replayed = client.get(f"/session/{sid}").json()
    print(f"\nafter restart, session {sid} still holds "
          f"{len(replayed['events'])} events: "
          f"{[e['type'] for e in replayed['events']]}")

shutil.rmtree(root)
