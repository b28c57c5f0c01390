"""HTTP JSON API for the sketch UI. One mutating request per session at a
time; distinct sessions are fully concurrent."""

from __future__ import annotations

import threading
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException
from fastapi.responses import FileResponse, JSONResponse
from pydantic import BaseModel

from .errors import ForgeError, StageError, UnsnappableEditError
from .pipeline import Session, load_photo, new_session_id
from .sketch import Camera, SketchEdit


class NewSessionRequest(BaseModel):
    photo_path: str | None = None
    mesh_path: str | None = None
    neutral_path: str | None = None
    camera: dict | None = None
    synthetic: dict | None = None  # {"seed": int, "size": int, ...}


class EditRequest(BaseModel):
    view: str = "frontal"
    curve: str
    s0: float
    s1: float
    replacement: list


class SynthesizeRequest(BaseModel):
    dump_stages: bool = False


class EarEditRequest(BaseModel):
    boundary: list
    redrawn: list


class MouthFillRequest(BaseModel):
    template: str = "open"


def create_app(root: str | Path) -> FastAPI:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    app = FastAPI(title="caricature-forge")
    sessions: dict[str, Session] = {}
    locks: dict[str, threading.Lock] = {}
    registry_lock = threading.Lock()

    def get_session(sid: str) -> Session:
        with registry_lock:
            if sid not in sessions:
                sdir = root / sid
                if not (sdir / "session.json").exists():
                    raise HTTPException(404, f"no session {sid}")
                sessions[sid] = Session.load(sdir)
                locks[sid] = threading.Lock()
            return sessions[sid]

    @app.get("/health")
    def health():
        return {"status": "ok"}

    @app.post("/sessions")
    def new_session(req: NewSessionRequest):
        sid = new_session_id()
        sdir = root / sid
        if req.synthetic is not None:
            from .synthetic import make_scene

            opts = req.synthetic
            size = int(opts.get("size", 512))
            scene = make_scene(
                image_size=(size, size),
                seed=int(opts.get("seed", 0)),
                rings=int(opts.get("rings", 24)),
                spokes=int(opts.get("spokes", 56)),
                expression=opts.get("expression"),
            )
            session = Session.create(
                sdir,
                scene["photo"],
                scene["mesh"],
                neutral=scene["neutral"],
                camera=scene["camera"],
            )
        else:
            if not req.photo_path or not req.mesh_path:
                raise HTTPException(422, "need photo_path and mesh_path (or synthetic)")
            from .mesh import load_mesh

            photo = load_photo(req.photo_path)
            mesh = load_mesh(req.mesh_path)
            neutral = load_mesh(req.neutral_path) if req.neutral_path else None
            camera = Camera.from_dict(req.camera) if req.camera else None
            session = Session.create(sdir, photo, mesh, neutral=neutral, camera=camera)
        with registry_lock:
            sessions[sid] = session
            locks[sid] = threading.Lock()
        return {"id": sid}

    @app.get("/sessions/{sid}/sketch")
    def get_sketch(sid: str, view: str = "frontal"):
        session = get_session(sid)
        if view not in session.cameras:
            raise HTTPException(422, f"unknown view '{view}'")
        return session.sketch_for(view).to_dict()

    @app.post("/sessions/{sid}/edits")
    def post_edit(sid: str, req: EditRequest):
        session = get_session(sid)
        if req.view not in session.cameras:
            raise HTTPException(422, f"unknown view '{req.view}'")
        try:
            edit = SketchEdit(req.curve, req.s0, req.s1, np.asarray(req.replacement))
        except ValueError as exc:
            raise HTTPException(422, str(exc))
        with locks[sid]:
            try:
                preview = session.edit_cycle(edit, req.view)
            except StageError as exc:
                status = 422 if isinstance(exc.cause, (UnsnappableEditError, ValueError)) else 500
                return JSONResponse(
                    {"error": str(exc.cause), "stage": exc.stage}, status_code=status
                )
            except ForgeError as exc:
                return JSONResponse({"error": str(exc)}, status_code=422)
        return preview

    @app.post("/sessions/{sid}/synthesize")
    def post_synthesize(sid: str, req: SynthesizeRequest | None = None):
        session = get_session(sid)
        with locks[sid]:
            try:
                path = session.synthesize(dump_stages=bool(req and req.dump_stages))
            except StageError as exc:
                return JSONResponse(
                    {"error": str(exc.cause), "stage": exc.stage}, status_code=500
                )
        return {"result": str(path), "counters": session.counters}

    @app.get("/sessions/{sid}/result")
    def get_result(sid: str):
        session = get_session(sid)
        path = session.dir / "result.png"
        if not path.exists():
            raise HTTPException(404, "no result yet; POST /synthesize first")
        return FileResponse(path, media_type="image/png")

    @app.get("/sessions/{sid}/photo")
    def get_photo(sid: str):
        session = get_session(sid)
        return FileResponse(session.dir / "photo.png", media_type="image/png")

    @app.post("/sessions/{sid}/ear-edit")
    def post_ear_edit(sid: str, req: EarEditRequest):
        session = get_session(sid)
        with locks[sid]:
            try:
                path = session.ear_edit(
                    np.asarray(req.boundary, dtype=np.float64),
                    np.asarray(req.redrawn, dtype=np.float64),
                )
            except (ValueError, ForgeError) as exc:
                return JSONResponse({"error": str(exc)}, status_code=422)
        return {"result": str(path)}

    @app.post("/sessions/{sid}/mouth-fill")
    def post_mouth_fill(sid: str, req: MouthFillRequest):
        session = get_session(sid)
        with locks[sid]:
            try:
                path = session.mouth_fill(req.template)
            except (ValueError, ForgeError) as exc:
                return JSONResponse({"error": str(exc)}, status_code=422)
        return {"result": str(path)}

    @app.get("/sessions/{sid}/state")
    def get_state(sid: str):
        """Canonical session state digest (used by UI round-trip tests)."""
        session = get_session(sid)
        digest = {
            "counters": session.counters,
            "lambda": None,
            "sketches": {},
        }
        if session.lam is not None:
            digest["lambda"] = [round(float(x), 9) for x in session.lam.values]
        for view in session.cameras:
            sk = session.sketch_for(view)
            digest["sketches"][view] = {
                name: np.round(pts, 5).tolist() for name, pts in sorted(sk.curves.items())
            }
        return digest

    return app
