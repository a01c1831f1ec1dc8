"""HTTP facade for the operator workflow: maps, missions, generation jobs,
and waterfall tiles, all under /v1.

State lives in an on-disk store with append-only JSON manifests; ids are
content hashes of the posted bodies, so they are stable across restarts and
duplicate posts are idempotent. Jobs run on a single worker thread (the
Markov chain is sequential anyway) and their tiles become retrievable while
the job is still running.
"""
from __future__ import annotations

import hashlib
import json
import queue
import threading
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from fastapi import FastAPI, HTTPException, Query, Response
from pydantic import BaseModel, Field

from . import conditioning
from .errors import FormatError, ValidationError
from .mission import (MissionSpec, ScanTile, WorldMap, plan_pings,
                      rasterize_rows, slice_tiles)
from .corpus import load_gray16_png, save_gray16_png
from .sequence import (GenerationMode, GenerationOptions, MissionScan,
                       generate_mission)
from .evaluation import drift_check, seam_discontinuity
from .training import load_checkpoint

_PNG_MEDIA = "image/png"


def _content_id(raw: bytes) -> str:
    return hashlib.sha256(raw).hexdigest()[:12]


def _atomic_write(path: Path, text: str) -> None:
    # Readers poll these files from other threads; rename keeps every read
    # consistent.
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text)
    tmp.replace(path)


class Store:
    """Content-addressed on-disk entity store with append-only manifests."""

    def __init__(self, root):
        self.root = Path(root)
        for sub in ("maps", "missions", "scans", "checkpoints", "jobs", "reports"):
            (self.root / sub).mkdir(parents=True, exist_ok=True)

    def _manifest(self, kind: str) -> Path:
        return self.root / f"{kind}_manifest.jsonl"

    def _append_manifest(self, kind: str, entry: dict) -> None:
        with self._manifest(kind).open("a") as fh:
            fh.write(json.dumps(entry) + "\n")

    def put_document(self, kind: str, raw: bytes) -> str:
        doc_id = _content_id(raw)
        path = self.root / kind / f"{doc_id}.json"
        if not path.exists():
            path.write_bytes(raw)
            self._append_manifest(kind, {"id": doc_id, "ts": time.time()})
        return doc_id

    def get_document(self, kind: str, doc_id: str) -> Optional[bytes]:
        path = self.root / kind / f"{doc_id}.json"
        return path.read_bytes() if path.exists() else None

    def scan_dir(self, mission_id: str) -> Path:
        return self.root / "scans" / mission_id

    def job_path(self, job_id: str) -> Path:
        return self.root / "jobs" / f"{job_id}.json"

    def write_job(self, job: dict) -> None:
        _atomic_write(self.job_path(job["id"]), json.dumps(job, indent=2))

    def read_job(self, job_id: str) -> Optional[dict]:
        path = self.job_path(job_id)
        return json.loads(path.read_text()) if path.exists() else None

    def checkpoint_dir(self, checkpoint_id: str) -> Path:
        return self.root / "checkpoints" / checkpoint_id


class RegionModel(BaseModel):
    polygon: list
    label: int


class WorldMapModel(BaseModel):
    format_version: int = 1
    width_m: float
    height_m: float
    background_label: int = 0
    regions: list[RegionModel] = Field(default_factory=list)


class MissionModel(BaseModel):
    format_version: int = 1
    map_id: str
    waypoints: list
    speed_mps: float = 1.0
    ping_rate_hz: float = 16.0
    swath_px: int = 512
    side: str = "port"


class GenerateRequest(BaseModel):
    checkpoint_id: Optional[str] = None
    mode: str = "markov"
    seed: int = 0
    tile_rows: Optional[int] = None


class EvaluateRequest(BaseModel):
    metrics: list[str] = Field(default_factory=lambda: ["seam"])


def _field_error(field_name: str, message: str) -> HTTPException:
    return HTTPException(status_code=422, detail=[
        {"loc": ["body", field_name], "msg": message, "type": "value_error"}])


@dataclass
class JobRunner:
    store: Store
    default_checkpoint: Optional[str] = None
    _queue: "queue.Queue" = field(default_factory=queue.Queue)
    _lock: threading.Lock = field(default_factory=threading.Lock)
    _active_missions: set = field(default_factory=set)

    def start(self) -> None:
        worker = threading.Thread(target=self._run_loop, daemon=True)
        worker.start()

    def submit_generate(self, mission_id: str, req: GenerateRequest) -> dict:
        with self._lock:
            if mission_id in self._active_missions:
                raise HTTPException(status_code=409,
                                    detail="a generate job is already running for this mission")
            self._active_missions.add(mission_id)
        job = {
            "id": uuid.uuid4().hex[:12],
            "kind": "generate",
            "state": "queued",
            "mission_id": mission_id,
            "tiles_done": 0,
            "tiles_total": None,
            "error_message": None,
            "params": req.model_dump(),
        }
        self.store.write_job(job)
        self._queue.put(job["id"])
        return job

    def submit_evaluate(self, mission_id: str, req: EvaluateRequest) -> dict:
        job = {
            "id": uuid.uuid4().hex[:12],
            "kind": "evaluate",
            "state": "queued",
            "mission_id": mission_id,
            "tiles_done": 0,
            "tiles_total": 0,
            "error_message": None,
            "params": req.model_dump(),
        }
        self.store.write_job(job)
        self._queue.put(job["id"])
        return job

    def _run_loop(self) -> None:
        while True:
            job_id = self._queue.get()
            job = self.store.read_job(job_id)
            if job is None:
                continue
            job["state"] = "running"
            self.store.write_job(job)
            try:
                if job["kind"] == "generate":
                    self._run_generate(job)
                else:
                    self._run_evaluate(job)
                job = self.store.read_job(job_id) or job
                job["state"] = "done"
            except Exception as exc:  # job errors land in the job record
                job["state"] = "failed"
                job["error_message"] = f"{type(exc).__name__}: {exc}"
            finally:
                self.store.write_job(job)
                if job["kind"] == "generate":
                    with self._lock:
                        self._active_missions.discard(job["mission_id"])

    def _load_mission(self, mission_id: str):
        raw = self.store.get_document("missions", mission_id)
        if raw is None:
            raise ValidationError(f"unknown mission {mission_id}")
        mission = MissionSpec.from_dict(json.loads(raw))
        map_raw = self.store.get_document("maps", mission.map_id)
        if map_raw is None:
            raise ValidationError(f"mission references unknown map {mission.map_id}")
        return mission, WorldMap.from_dict(json.loads(map_raw))

    def _run_generate(self, job: dict) -> None:
        mission, world = self._load_mission(job["mission_id"])
        ckpt_id = job["params"].get("checkpoint_id") or self.default_checkpoint
        if not ckpt_id:
            raise ValidationError("no checkpoint_id given and no default configured")
        checkpoint = load_checkpoint(self.store.checkpoint_dir(ckpt_id))
        if mission.swath_px != checkpoint.swath_px:
            raise ValidationError(
                f"mission swath {mission.swath_px} != checkpoint swath {checkpoint.swath_px}")
        positions, attitude = plan_pings(mission, world)
        rows = rasterize_rows(world, positions, attitude, mission.side,
                              mission.swath_px)
        tiles_x = slice_tiles(rows, checkpoint.tile_rows, world.background_label)

        mode = job["params"].get("mode", "markov")
        mode = "sigmoid_blended" if mode == "sigmoid" else mode
        opts = GenerationOptions(
            mode=GenerationMode(mode),
            blend_window_rows=conditioning.default_snippet_rows(checkpoint.tile_rows),
            base_seed=int(job["params"].get("seed", 0)))
        scan = generate_mission(tiles_x, attitude, checkpoint, opts)

        out = self.store.scan_dir(job["mission_id"])
        (out / "tiles").mkdir(parents=True, exist_ok=True)
        job["tiles_total"] = len(tiles_x)
        self.store.write_job(job)
        manifest = {
            "mission_id": job["mission_id"],
            "mode": opts.mode.value,
            "seed": opts.base_seed,
            "checkpoint_id": ckpt_id,
            "tile_rows": checkpoint.tile_rows,
            "swath_px": checkpoint.swath_px,
            "total_pings": scan.total_pings,
            "tiles": [],
        }
        for tile in scan.tiles:
            # Tile data lands on disk before the manifest references it, so a
            # crash can never leave dangling manifest entries.
            save_gray16_png(tile.intensity, out / "tiles" / f"{tile.tile_index:05d}.png")
            manifest["tiles"].append({"index": tile.tile_index,
                                      "valid_rows": tile.valid_rows})
            _atomic_write(out / "manifest.json", json.dumps(manifest, indent=2))
            job["tiles_done"] = tile.tile_index + 1
            self.store.write_job(job)

    def _run_evaluate(self, job: dict) -> None:
        scan = _load_stored_scan(self.store, job["mission_id"])
        if scan is None:
            raise ValidationError("no generated scan for this mission")
        report = {"mission_id": job["mission_id"], "metrics": {}}
        metrics = job["params"].get("metrics", ["seam"])
        if "seam" in metrics and len(scan.tile_list) >= 2:
            report["metrics"]["seam"] = seam_discontinuity(scan).to_dict()
        if "drift" in metrics and len(scan.tile_list) >= 100:
            report["metrics"]["drift"] = drift_check(scan)
        path = self.store.root / "reports" / f"{job['mission_id']}.json"
        path.write_text(json.dumps(report, indent=2))


def _load_stored_scan(store: Store, mission_id: str) -> Optional[MissionScan]:
    out = store.scan_dir(mission_id)
    manifest_path = out / "manifest.json"
    if not manifest_path.exists():
        return None
    manifest = json.loads(manifest_path.read_text())
    tiles = []
    for entry in manifest["tiles"]:
        intensity = load_gray16_png(out / "tiles" / f"{entry['index']:05d}.png")
        tiles.append(ScanTile(intensity=intensity, tile_index=entry["index"],
                              provenance="generated",
                              valid_rows=entry["valid_rows"]))
    seams = [i * manifest["tile_rows"] for i in range(1, len(tiles))]
    return MissionScan(tiles=tiles, mode=manifest["mode"],
                       total_pings=manifest["total_pings"],
                       tile_rows=manifest["tile_rows"], seam_row_indices=seams)


def create_app(store_path, default_checkpoint: Optional[str] = None) -> FastAPI:
    store = Store(store_path)
    runner = JobRunner(store=store, default_checkpoint=default_checkpoint)
    runner.start()
    app = FastAPI(title="sonarsynth", version="1")
    app.state.store = store
    app.state.runner = runner

    @app.get("/v1/health")
    def health():
        return {"status": "ok"}

    @app.post("/v1/maps", status_code=201)
    def post_map(body: WorldMapModel):
        try:
            WorldMap.from_dict(body.model_dump())
        except (ValidationError, FormatError) as exc:
            raise _field_error("regions", str(exc))
        raw = json.dumps(body.model_dump()).encode()
        return {"map_id": store.put_document("maps", raw)}

    @app.get("/v1/maps/{map_id}")
    def get_map(map_id: str):
        raw = store.get_document("maps", map_id)
        if raw is None:
            raise HTTPException(404, f"unknown map {map_id}")
        return Response(content=raw, media_type="application/json")

    @app.post("/v1/missions", status_code=201)
    def post_mission(body: MissionModel):
        try:
            MissionSpec.from_dict(body.model_dump())
        except (ValidationError, FormatError) as exc:
            raise _field_error("waypoints", str(exc))
        if store.get_document("maps", body.map_id) is None:
            raise _field_error("map_id", f"unknown map {body.map_id}")
        raw = json.dumps(body.model_dump()).encode()
        return {"mission_id": store.put_document("missions", raw)}

    @app.get("/v1/missions/{mission_id}")
    def get_mission(mission_id: str):
        raw = store.get_document("missions", mission_id)
        if raw is None:
            raise HTTPException(404, f"unknown mission {mission_id}")
        return Response(content=raw, media_type="application/json")

    @app.post("/v1/missions/{mission_id}/generate", status_code=202)
    def post_generate(mission_id: str, body: GenerateRequest):
        if store.get_document("missions", mission_id) is None:
            raise HTTPException(404, f"unknown mission {mission_id}")
        try:
            GenerationMode("sigmoid_blended" if body.mode == "sigmoid" else body.mode)
        except ValueError:
            raise _field_error("mode", f"unknown mode {body.mode!r}")
        job = runner.submit_generate(mission_id, body)
        return {"job_id": job["id"]}

    @app.post("/v1/missions/{mission_id}/evaluate", status_code=202)
    def post_evaluate(mission_id: str, body: EvaluateRequest):
        if store.get_document("missions", mission_id) is None:
            raise HTTPException(404, f"unknown mission {mission_id}")
        job = runner.submit_evaluate(mission_id, body)
        return {"job_id": job["id"]}

    @app.get("/v1/jobs/{job_id}")
    def get_job(job_id: str):
        job = store.read_job(job_id)
        if job is None:
            raise HTTPException(404, f"unknown job {job_id}")
        return job

    @app.get("/v1/missions/{mission_id}/tiles")
    def list_tiles(mission_id: str,
                   lo: int = Query(0, alias="from"),
                   hi: int = Query(1 << 30, alias="to")):
        return _tile_listing(mission_id, lo, hi)

    def _tile_listing(mission_id: str, lo: int, hi: int):
        if store.get_document("missions", mission_id) is None:
            raise HTTPException(404, f"unknown mission {mission_id}")
        manifest_path = store.scan_dir(mission_id) / "manifest.json"
        entries = []
        if manifest_path.exists():
            manifest = json.loads(manifest_path.read_text())
            for entry in manifest["tiles"]:
                if lo <= entry["index"] < hi:
                    entries.append({
                        "index": entry["index"],
                        "valid_rows": entry["valid_rows"],
                        "url": f"/v1/missions/{mission_id}/tiles/{entry['index']}.png",
                    })
        entries.sort(key=lambda e: e["index"])
        return {"tiles": entries}

    @app.get("/v1/missions/{mission_id}/tiles/{index}.png")
    def get_tile(mission_id: str, index: int):
        path = store.scan_dir(mission_id) / "tiles" / f"{index:05d}.png"
        if not path.exists():
            raise HTTPException(404, f"tile {index} not available")
        return Response(content=path.read_bytes(), media_type=_PNG_MEDIA)

    @app.get("/v1/missions/{mission_id}/report")
    def get_report(mission_id: str):
        path = store.root / "reports" / f"{mission_id}.json"
        if not path.exists():
            raise HTTPException(404, "no report computed for this mission")
        return json.loads(path.read_text())

    return app


def load_service_config(path=None) -> dict:
    """Service settings from a JSON file with environment overrides."""
    import os

    cfg = {"port": 8089, "store": "./sonar_store", "default_checkpoint": None}
    if path:
        cfg.update(json.loads(Path(path).read_text()))
    if os.environ.get("SONAR_STORE"):
        cfg["store"] = os.environ["SONAR_STORE"]
    if os.environ.get("SONAR_PORT"):
        cfg["port"] = int(os.environ["SONAR_PORT"])
    return cfg


def serve(config_path=None) -> None:
    import uvicorn

    cfg = load_service_config(config_path)
    app = create_app(cfg["store"], cfg.get("default_checkpoint"))
    uvicorn.run(app, host="127.0.0.1", port=int(cfg["port"]), log_level="warning")
