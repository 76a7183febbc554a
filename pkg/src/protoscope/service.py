"""HTTP serving: prediction sessions, interventions, prototype
browsing, durable event log.

State model: every mutation (session created, intervention applied,
label recorded) is appended to a JSON-lines event log and fsynced
before the response is acknowledged, with a periodic snapshot to bound
replay time. On startup the store loads the latest snapshot and replays
newer events, deduplicating by sequence number, so a crash between
append and snapshot loses nothing that was acknowledged and a partial
trailing line (a crash mid-write) is ignored because it was never
acknowledged.

Serving never writes to model parameters; the checkpoint file's digest
is stable across any request sequence.
"""

import io
import json
import os
import threading
import time
from dataclasses import dataclass, field

import numpy as np
from PIL import Image, UnidentifiedImageError

from .checkpoint import file_sha256, load_checkpoint
from .errors import StaleSessionError
from .interpret import ArtifactStore, compute_representatives, explain
from .intervene import local_discard
from .metrics import reject_or_accept
from .synthetic import load_corpus
from .train import restore_model

_CROCKFORD = "0123456789ABCDEFGHJKMNPQRSTVWXYZ"


def make_session_id(ts_ms=None, rand=None):
    """26-char sortable id: 48-bit millisecond timestamp + 80 random bits,
    Crockford base32."""
    ts = int(time.time() * 1000) if ts_ms is None else int(ts_ms)
    rnd = os.urandom(10) if rand is None else rand
    value = (ts << 80) | int.from_bytes(rnd, "big")
    chars = []
    for _ in range(26):
        chars.append(_CROCKFORD[value & 31])
        value >>= 5
    return "".join(reversed(chars))


@dataclass
class SessionState:
    session_id: str
    case_id: str
    bank_version: str
    explanation: dict
    image_artifact: str
    mask: list
    tau_current: list
    p_current: list
    decision: dict
    human_label: str = None
    events: list = field(default_factory=list)

    def public(self):
        return {
            "session_id": self.session_id,
            "case_id": self.case_id,
            "bank_version": self.bank_version,
            "explanation": self.explanation,
            "image_artifact": self.image_artifact,
            "mask": self.mask,
            "tau_current": self.tau_current,
            "p_current": self.p_current,
            "decision": self.decision,
            "human_label": self.human_label,
            "events": self.events,
        }


class EventStore:
    """Append-only JSON-lines log with snapshots and crash recovery."""

    def __init__(self, state_dir, snapshot_every=50):
        self.dir = str(state_dir)
        os.makedirs(self.dir, exist_ok=True)
        self.log_path = os.path.join(self.dir, "events.jsonl")
        self.snap_path = os.path.join(self.dir, "snapshot.json")
        self.snapshot_every = snapshot_every
        self.lock = threading.RLock()
        self.seq = 0
        self.sessions = {}
        self._recover()

    def _recover(self):
        if os.path.exists(self.snap_path):
            with open(self.snap_path) as f:
                snap = json.load(f)
            self.seq = snap["last_seq"]
            self.sessions = {sid: SessionState(**state)
                             for sid, state in snap["sessions"].items()}
        if os.path.exists(self.log_path):
            with open(self.log_path) as f:
                for line in f:
                    line = line.strip()
                    if not line:
                        continue
                    try:
                        event = json.loads(line)
                    except json.JSONDecodeError:
                        # a torn final line was never acknowledged
                        continue
                    if event["seq"] <= self.seq:
                        continue
                    self._apply(event)
                    self.seq = event["seq"]

    def _apply(self, event):
        kind = event["type"]
        payload = event["payload"]
        if kind == "session_created":
            state = SessionState(**payload)
            self.sessions[state.session_id] = state
            state.events.append(_event_view(event))
        elif kind == "intervention":
            s = self.sessions[event["session_id"]]
            s.mask = payload["mask"]
            s.tau_current = payload["tau"]
            s.p_current = payload["p"]
            s.events.append(_event_view(event))
        elif kind == "label":
            s = self.sessions[event["session_id"]]
            s.human_label = payload["label"]
            s.events.append(_event_view(event))

    def append(self, kind, session_id, payload):
        """Durably record one event, then apply it. Returns the event."""
        with self.lock:
            self.seq += 1
            event = {"seq": self.seq, "ts": time.time(), "type": kind,
                     "session_id": session_id, "payload": payload}
            with open(self.log_path, "a") as f:
                f.write(json.dumps(event, sort_keys=True) + "\n")
                f.flush()
                os.fsync(f.fileno())
            self._apply(event)
            if self.seq % self.snapshot_every == 0:
                self._write_snapshot()
            return event

    def _write_snapshot(self):
        snap = {"last_seq": self.seq,
                "sessions": {sid: s.public() for sid, s in self.sessions.items()}}
        tmp = self.snap_path + ".tmp"
        with open(tmp, "w") as f:
            json.dump(snap, f, sort_keys=True)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, self.snap_path)

    def get(self, session_id):
        with self.lock:
            return self.sessions.get(session_id)

    def list_ids(self):
        with self.lock:
            return sorted(self.sessions)


def _event_view(event):
    return {"seq": event["seq"], "ts": event["ts"], "type": event["type"]}


def create_app(checkpoint_path=None, corpus_dir=None, state_dir=None,
               dor_path=None, top_n=3, repr_count=5, frontend_dir=None):
    """Build the FastAPI application.

    Without a checkpoint the app still starts but answers 503 on every
    model-dependent route, so orchestration can health-check it before
    the model is in place.
    """
    from fastapi import FastAPI, HTTPException, Request, UploadFile
    from fastapi.responses import FileResponse, HTMLResponse, Response
    from pydantic import BaseModel

    class InterveneBody(BaseModel):
        mask: list
        bank_version: str | None = None

    class LabelBody(BaseModel):
        label: str

    class PredictBody(BaseModel):
        corpus_id: str

    app = FastAPI(title="protoscope service")

    state_dir = state_dir or "service_state"
    store = EventStore(state_dir)
    artifacts = ArtifactStore(os.path.join(state_dir, "artifacts"))

    model = None
    checkpoint_digest = None
    corpus = None
    representatives = {}
    dor_payload = None
    if checkpoint_path is not None:
        ckpt = load_checkpoint(checkpoint_path)
        model = restore_model(ckpt)
        checkpoint_digest = file_sha256(checkpoint_path)
    if corpus_dir is not None:
        corpus = load_corpus(corpus_dir)
        if model is not None:
            computed = compute_representatives(
                model, corpus, split="train", per_proto=repr_count)
            # patch pixels become content-hashed artifacts so clients
            # can render representative strips without corpus access
            for pid, reps in computed.items():
                rows = []
                for r in reps:
                    row = r.to_dict()
                    r0, c0, r1, c1 = r.crop
                    img = corpus.image_by_id(r.image_id)
                    patch = np.round(img[r0:r1, c0:c1] * 255.0).astype(np.uint8)
                    row["patch_png"] = artifacts.put_png(patch)
                    rows.append(row)
                representatives[pid] = rows
    if dor_path is not None:
        with open(dor_path) as f:
            dor_payload = json.load(f)

    app.state.model = model
    app.state.store = store
    app.state.corpus = corpus

    def require_model():
        if model is None:
            raise HTTPException(status_code=503, detail="no checkpoint loaded")

    def decode_upload(data):
        try:
            with Image.open(io.BytesIO(data)) as im:
                rgb = im.convert("RGB")
                size = model.config.backbone.input_size
                if rgb.size != (size, size):
                    rgb = rgb.resize((size, size), Image.LANCZOS)
                return np.asarray(rgb, dtype=np.float64) / 255.0
        except (UnidentifiedImageError, OSError):
            raise HTTPException(status_code=400, detail="image could not be decoded")

    def start_session(image, case_id):
        expl = explain(model, image, case_id=case_id, top_n=top_n)
        expl_dict = expl.to_dict(artifacts)
        png = np.round(np.asarray(image) * 255.0).astype(np.uint8)
        buf = io.BytesIO()
        Image.fromarray(png).save(buf, format="PNG")
        image_artifact = artifacts.put_bytes(buf.getvalue(), ".png")
        status, cls = reject_or_accept(expl.expected_p)
        decision = {"status": status,
                    "class_index": cls,
                    "class_name": (model.bank.class_names[cls]
                                   if cls is not None else None),
                    "entropy": expl.entropy,
                    "threshold": 0.7}
        sid = make_session_id()
        payload = {
            "session_id": sid,
            "case_id": case_id,
            "bank_version": expl.bank_version,
            "explanation": expl_dict,
            "image_artifact": image_artifact,
            "mask": [1] * len(expl.top),
            "tau_current": expl.tau.tolist(),
            "p_current": expl.p_softmax.tolist(),
            "decision": decision,
            "human_label": None,
            "events": [],
        }
        store.append("session_created", sid, payload)
        return store.get(sid)

    def session_payload(s):
        body = s.public()
        if representatives:
            shown = {c["prototype"] for c in s.explanation["top"]}
            body["representatives"] = {
                pid: reps for pid, reps in representatives.items()
                if pid in shown}
        return body

    @app.get("/healthz")
    def healthz():
        return {"status": "ok",
                "model_loaded": model is not None,
                "checkpoint_sha256": checkpoint_digest,
                "bank_version": model.bank.version() if model is not None else None,
                "sessions": len(store.sessions)}

    @app.post("/predict")
    async def predict(request: Request):
        require_model()
        content_type = request.headers.get("content-type", "")
        if content_type.startswith("multipart/form-data"):
            form = await request.form()
            upload = form.get("image")
            if upload is None:
                raise HTTPException(status_code=400, detail="missing 'image' field")
            data = await upload.read()
            image = decode_upload(data)
            case_id = getattr(upload, "filename", None) or "upload"
        else:
            try:
                body = PredictBody(**(await request.json()))
            except Exception:
                raise HTTPException(status_code=400,
                                    detail="expected multipart image or corpus_id JSON")
            if corpus is None:
                raise HTTPException(status_code=503, detail="no corpus mounted")
            try:
                record = corpus.record(body.corpus_id)
            except Exception:
                raise HTTPException(status_code=404,
                                    detail=f"unknown corpus id {body.corpus_id!r}")
            image = corpus.image_by_id(record.id)
            case_id = record.id
        s = start_session(image, case_id)
        return session_payload(s)

    @app.get("/session/{session_id}")
    def get_session(session_id: str):
        s = store.get(session_id)
        if s is None:
            raise HTTPException(status_code=404, detail="unknown session")
        return session_payload(s)

    @app.post("/session/{session_id}/intervene")
    def intervene(session_id: str, body: InterveneBody):
        require_model()
        s = store.get(session_id)
        if s is None:
            raise HTTPException(status_code=404, detail="unknown session")
        if len(body.mask) != len(s.explanation["top"]):
            raise HTTPException(
                status_code=422,
                detail=f"mask must have {len(s.explanation['top'])} entries")
        if any(v not in (0, 1) for v in body.mask):
            raise HTTPException(status_code=422, detail="mask entries must be 0 or 1")
        current_bank = model.bank.version()
        if s.bank_version != current_bank:
            raise HTTPException(status_code=409,
                                detail="session bank version is stale")
        if body.bank_version is not None and body.bank_version != s.bank_version:
            raise HTTPException(status_code=409,
                                detail="request bank version is stale")
        try:
            tau_hat, p_hat = local_discard(s.explanation, body.mask,
                                           bank_version=current_bank)
        except StaleSessionError:
            raise HTTPException(status_code=409,
                                detail="session bank version is stale")
        store.append("intervention", session_id, {
            "mask": list(body.mask),
            "tau": tau_hat.tolist(),
            "p": p_hat.tolist(),
        })
        return session_payload(store.get(session_id))

    @app.post("/session/{session_id}/label")
    def label(session_id: str, body: LabelBody):
        s = store.get(session_id)
        if s is None:
            raise HTTPException(status_code=404, detail="unknown session")
        allowed = (set(model.bank.class_names) if model is not None else set())
        allowed |= {"reject", "unsure"}
        if body.label not in allowed:
            raise HTTPException(status_code=422,
                                detail=f"label must be one of {sorted(allowed)}")
        store.append("label", session_id, {"label": body.label})
        return session_payload(store.get(session_id))

    @app.get("/sessions")
    def list_sessions():
        return {"session_ids": store.list_ids()}

    @app.get("/prototypes")
    def prototypes():
        require_model()
        bank = model.bank
        rows = []
        for ci in range(bank.num_classes):
            for j in range(bank.per_class):
                pid = bank.proto_id(ci, j)
                row = {"prototype": pid,
                       "class_index": ci,
                       "class_name": bank.class_names[ci],
                       "within_class": j,
                       "weight": float(bank.w.values[ci, j])}
                if dor_payload is not None and pid in dor_payload.get("summary", {}):
                    row["dor"] = dor_payload["summary"][pid]
                rows.append(row)
        return {"bank_version": bank.version(),
                "class_names": list(bank.class_names),
                "prototypes": rows}

    @app.get("/prototypes/{prototype_id}/representatives")
    def prototype_representatives(prototype_id: str):
        require_model()
        if prototype_id not in representatives:
            if not representatives:
                raise HTTPException(status_code=503,
                                    detail="no corpus mounted, representatives unavailable")
            raise HTTPException(status_code=404, detail="unknown prototype")
        return {"prototype": prototype_id,
                "representatives": representatives[prototype_id]}

    @app.get("/cases")
    def cases(split: str = "test", limit: int = 20):
        if corpus is None:
            raise HTTPException(status_code=503, detail="no corpus mounted")
        ids = corpus.ids(split)
        if not ids:
            raise HTTPException(status_code=404,
                                detail=f"unknown or empty split {split!r}")
        return {"split": split, "case_ids": ids[:limit]}

    @app.get("/artifacts/{name}")
    def artifact(name: str):
        if "/" in name or ".." in name:
            raise HTTPException(status_code=404, detail="no such artifact")
        path = os.path.join(artifacts.root, name)
        if not os.path.exists(path):
            raise HTTPException(status_code=404, detail="no such artifact")
        media = "image/png" if name.endswith(".png") else "application/octet-stream"
        with open(path, "rb") as f:
            return Response(content=f.read(), media_type=media)

    if frontend_dir is not None and os.path.isdir(frontend_dir):
        @app.get("/", response_class=HTMLResponse)
        def index():
            return FileResponse(os.path.join(frontend_dir, "index.html"))

        @app.get("/assets/{name}")
        def asset(name: str):
            if "/" in name or ".." in name:
                raise HTTPException(status_code=404, detail="no such asset")
            path = os.path.join(frontend_dir, "assets", name)
            if not os.path.exists(path):
                raise HTTPException(status_code=404, detail="no such asset")
            return FileResponse(path)

    return app
