"""HTTP service for the human-in-the-loop annotation task.

Annotators paint per-frame importance maps with two fixed brushes, preview a
bitrate-neutral re-encode driven by their map, and finish with a shuffled
side-by-side comparison; the annotation is accepted only when they pick the
re-encoded side. Sessions are keyed by (annotator, video) and survive
restarts in a file-backed store, which also makes every session's resume URL
stable.

Endpoints (JSON unless noted):

    POST /sessions                      {annotator, video_id} -> session doc
    GET  /sessions/{id}                 session doc
    GET  /sessions/{id}/map/{n}         working importance map, PGM bytes
    GET  /videos                        video listing
    GET  /videos/{id}/frame/{n}         luma frame, PGM bytes
    POST /sessions/{id}/strokes         {strokes: [...]} -> session doc
    POST /sessions/{id}/preview         offsets + simulated rate report
    POST /sessions/{id}/comparison      {start: true} or {choice, shuffle_key}
    GET  /resume/{annotator}/{video}    session doc (created if absent)

Brushes: coarse is 40 px wide and saturates at 127, fine is 20 px wide and
saturates at 255; every dab adds 26 (about 10% of full scale) up to the cap.
Stroke application is idempotent per stroke_id so clients may retry.

One writer per session: opening a session issues a write lease token (or a
read-only view when another window holds it); mutating POSTs carry
writer_token and writes renew the lease, which otherwise expires after
writer_lease_seconds. `{"takeover": true}` on open claims it explicitly.
"""

from __future__ import annotations

import base64
import hashlib
import json
import re
import secrets
import threading
import time
import zlib
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from io import BytesIO
from pathlib import Path

import numpy as np

from . import encode as encode_mod
from . import qpsolver
from .gridmap import pool_to_grid
from .media import load_y4m, save_pgm
from .qpsolver import SolverConfig

DAB_INCREMENT = 26

#: brush name -> (width in pixels, saturation cap)
BRUSHES = {"coarse": (40, 127), "fine": (20, 255)}

STATES = ("painting", "comparing", "accepted", "rejected")


class ApiError(Exception):
    def __init__(self, status: int, message: str):
        super().__init__(message)
        self.status = status
        self.message = message


@dataclass(frozen=True)
class ServiceConfig:
    videos_dir: Path
    store_dir: Path
    map_scale: float = 0.6
    target_bitrate_kbps: float = 300.0
    qp_base: int = 26
    solver: SolverConfig = field(default_factory=SolverConfig)
    encoder_template: str | None = None
    shuffle_seed: int | None = None  # deterministic A/B assignment for tests
    writer_lease_seconds: float = 90.0


def apply_stroke(map_values: np.ndarray, stroke: dict) -> np.ndarray:
    """One stroke on one map: +26 per covering dab, clamped at the brush cap.

    The footprint of each path point is a hard-edged disc of the brush width;
    values never decrease and never exceed the brush's saturation cap (pixels
    already above the cap are left alone).
    """
    brush = stroke.get("brush")
    if brush not in BRUSHES:
        raise ApiError(400, f"unknown brush {brush!r}")
    width, cap = BRUSHES[brush]
    radius = width / 2.0
    h, w = map_values.shape
    out = map_values.astype(np.int32)
    for point in stroke["path"]:
        x, y = float(point[0]), float(point[1])
        if not (0 <= x < w and 0 <= y < h):
            raise ApiError(400, f"path point ({x}, {y}) outside map bounds")
        x0, x1 = int(np.floor(x - radius)), int(np.ceil(x + radius)) + 1
        y0, y1 = int(np.floor(y - radius)), int(np.ceil(y + radius)) + 1
        x0, y0 = max(0, x0), max(0, y0)
        x1, y1 = min(w, x1), min(h, y1)
        yy, xx = np.mgrid[y0:y1, x0:x1]
        disc = (xx - x) ** 2 + (yy - y) ** 2 <= radius * radius
        region = out[y0:y1, x0:x1]
        bumped = np.minimum(region + DAB_INCREMENT, cap)
        region[disc] = np.maximum(region, bumped)[disc]
    return out.astype(np.uint8)


def session_id_for(annotator: str, video_id: str) -> str:
    return hashlib.sha1(f"{annotator}|{video_id}".encode()).hexdigest()[:16]


class _Store:
    """One JSON file per session, written atomically."""

    def __init__(self, root: Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def path(self, session_id: str) -> Path:
        return self.root / f"{session_id}.json"

    def load(self, session_id: str) -> dict | None:
        p = self.path(session_id)
        if not p.exists():
            return None
        try:
            return json.loads(p.read_text())
        except (json.JSONDecodeError, UnicodeDecodeError) as e:
            raise ApiError(500, f"corrupt store entry {p.name}: {e}") from None

    def save(self, doc: dict) -> None:
        p = self.path(doc["session_id"])
        tmp = p.with_suffix(".tmp")
        tmp.write_text(json.dumps(doc))
        tmp.replace(p)


def _pack_map(values: np.ndarray) -> str:
    return base64.b64encode(zlib.compress(values.tobytes())).decode("ascii")


def _unpack_map(blob: str, h: int, w: int) -> np.ndarray:
    raw = zlib.decompress(base64.b64decode(blob))
    return np.frombuffer(raw, np.uint8).reshape(h, w).copy()


#: sentinel for direct library callers, which bypass the writer lease
_TRUSTED = object()


class AnnotationService:
    """Session logic behind the HTTP handler; safe for concurrent sessions.

    Mutating operations called over HTTP carry the writer token issued at
    open/resume; the API layer enforces one writer per session that way.
    Direct in-process callers are trusted by default.
    """

    def __init__(self, cfg: ServiceConfig):
        self.cfg = cfg
        self.store = _Store(cfg.store_dir)
        self._videos: dict[str, object] = {}
        self._locks: dict[str, threading.Lock] = {}
        self._global = threading.Lock()
        self._shuffle_rng = np.random.default_rng(cfg.shuffle_seed)

    # -- videos -------------------------------------------------------

    def list_videos(self) -> list[dict]:
        out = []
        for p in sorted(Path(self.cfg.videos_dir).glob("*.y4m")):
            out.append({"video_id": p.stem})
        return out

    def video(self, video_id: str):
        with self._global:
            if video_id not in self._videos:
                path = Path(self.cfg.videos_dir) / f"{video_id}.y4m"
                if not path.exists():
                    raise ApiError(404, f"unknown video {video_id!r}")
                with open(path, "rb") as f:
                    self._videos[video_id] = load_y4m(f)
            return self._videos[video_id]

    def frame_pgm(self, video_id: str, index: int) -> bytes:
        video = self.video(video_id)
        if not 0 <= index < len(video):
            raise ApiError(404, f"frame {index} out of range")
        buf = BytesIO()
        save_pgm(video.frames[index].y, buf)
        return buf.getvalue()

    def _map_dims(self, video) -> tuple[int, int]:
        return (
            max(1, round(video.height * self.cfg.map_scale)),
            max(1, round(video.width * self.cfg.map_scale)),
        )

    # -- sessions -----------------------------------------------------

    def _lock_for(self, session_id: str) -> threading.Lock:
        with self._global:
            return self._locks.setdefault(session_id, threading.Lock())

    def _fresh_doc(self, annotator: str, video_id: str) -> dict:
        video = self.video(video_id)
        mh, mw = self._map_dims(video)
        empty = _pack_map(np.zeros((mh, mw), np.uint8))
        return {
            "session_id": session_id_for(annotator, video_id),
            "annotator": annotator,
            "video_id": video_id,
            "state": "painting",
            "map_height": mh,
            "map_width": mw,
            "frame_count": len(video),
            "maps": [empty] * len(video),
            "applied_strokes": [],
            "stroke_history": [],
            "shuffle": None,
            "verdicts": [],
            "writer": None,
        }

    def open_session(self, annotator: str, video_id: str, takeover: bool = False) -> dict:
        """Open or resume a session, claiming the writer lease when free.

        Only one client at a time holds the lease (renewed by its writes);
        others get a read-only view until the lease expires or they
        explicitly take over.
        """
        if not annotator or not video_id:
            raise ApiError(400, "annotator and video_id are required")
        sid = session_id_for(annotator, video_id)
        with self._lock_for(sid):
            doc = self.store.load(sid)
            if doc is None:
                doc = self._fresh_doc(annotator, video_id)
            token = self._claim_writer(doc, takeover)
            self.store.save(doc)
            public = self._public(doc)
            public["read_only"] = token is None
            if token is not None:
                public["writer_token"] = token
            return public

    def _claim_writer(self, doc: dict, takeover: bool) -> str | None:
        now = time.time()
        writer = doc.get("writer")
        if takeover or writer is None or writer["expires"] <= now:
            token = secrets.token_hex(8)
            doc["writer"] = {
                "token": token,
                "expires": now + self.cfg.writer_lease_seconds,
            }
            return token
        return None

    def validate_writer(self, doc: dict, token: str | None) -> None:
        """Raise unless `token` holds the session's write lease; renews it."""
        writer = doc.get("writer")
        if not token or not writer or writer["token"] != token:
            raise ApiError(
                409,
                "another window holds this session's write lease (read-only); "
                "reopen with takeover to claim it",
            )
        writer["expires"] = time.time() + self.cfg.writer_lease_seconds

    def _require(self, session_id: str) -> dict:
        doc = self.store.load(session_id)
        if doc is None:
            raise ApiError(404, f"unknown session {session_id!r}")
        return doc

    def get_session(self, session_id: str) -> dict:
        with self._lock_for(session_id):
            return self._public(self._require(session_id))

    def session_map(self, session_id: str, frame: int) -> bytes:
        with self._lock_for(session_id):
            doc = self._require(session_id)
            if not 0 <= frame < doc["frame_count"]:
                raise ApiError(404, f"frame {frame} out of range")
            values = _unpack_map(doc["maps"][frame], doc["map_height"], doc["map_width"])
            buf = BytesIO()
            save_pgm(values, buf)
            return buf.getvalue()

    def resume(self, annotator: str, video_id: str) -> dict:
        return self.open_session(annotator, video_id)

    def _public(self, doc: dict) -> dict:
        maps = [
            _unpack_map(m, doc["map_height"], doc["map_width"]) for m in doc["maps"]
        ]
        total = doc["map_height"] * doc["map_width"]
        coverage_coarse = float(np.mean([(m > 0).sum() / total for m in maps]))
        coverage_fine = float(np.mean([(m > 127).sum() / total for m in maps]))
        writer = doc.get("writer")
        return {
            "session_id": doc["session_id"],
            "annotator": doc["annotator"],
            "video_id": doc["video_id"],
            "state": doc["state"],
            "map_height": doc["map_height"],
            "map_width": doc["map_width"],
            "frame_count": doc["frame_count"],
            "coverage_coarse": coverage_coarse,
            "coverage_fine": coverage_fine,
            "stroke_count": len(doc["stroke_history"]),
            "verdicts": doc["verdicts"],
            "resume_url": f"/resume/{doc['annotator']}/{doc['video_id']}",
            "writer_active": bool(writer and writer["expires"] > time.time()),
        }

    # -- painting -----------------------------------------------------

    def add_strokes(
        self, session_id: str, strokes: list[dict], writer_token=_TRUSTED
    ) -> dict:
        with self._lock_for(session_id):
            doc = self._require(session_id)
            if writer_token is not _TRUSTED:
                self.validate_writer(doc, writer_token)
            if doc["state"] == "comparing":
                raise ApiError(409, "session is in the comparison step")
            for stroke in strokes:
                sid = stroke.get("stroke_id")
                if sid is not None and sid in doc["applied_strokes"]:
                    continue  # idempotent retry
                start = int(stroke.get("frame_start", 0))
                end = stroke.get("frame_end")
                end = doc["frame_count"] - 1 if end is None else int(end)
                if not 0 <= start <= end < doc["frame_count"]:
                    raise ApiError(400, f"bad frame range [{start}, {end}]")
                for fr in range(start, end + 1):
                    values = _unpack_map(
                        doc["maps"][fr], doc["map_height"], doc["map_width"]
                    )
                    doc["maps"][fr] = _pack_map(apply_stroke(values, stroke))
                if sid is not None:
                    doc["applied_strokes"].append(sid)
                doc["stroke_history"].append(
                    {k: stroke[k] for k in ("brush", "path") if k in stroke}
                    | {"frame_start": start, "frame_end": end}
                )
            doc["state"] = "painting"  # accepted/rejected return to painting
            self.store.save(doc)
            return self._public(doc)

    # -- preview ------------------------------------------------------

    def preview(self, session_id: str) -> dict:
        with self._lock_for(session_id):
            doc = self._require(session_id)
            if doc["state"] != "painting":
                raise ApiError(409, f"preview requires painting state, not {doc['state']}")
            video = self.video(doc["video_id"])
            grids = []
            real_ratios = []
            for blob in doc["maps"]:
                values = _unpack_map(blob, doc["map_height"], doc["map_width"])
                pooled = pool_to_grid(values, video.width, video.height)
                grid, report = qpsolver.solve_dqp(pooled, self.cfg.solver)
                grids.append(grid)
                real_ratios.append(report.real_ratio)
            dqp = np.stack(grids)
            job = encode_mod.EncodeJob(
                video=video,
                dqp=dqp,
                target_bitrate_kbps=self.cfg.target_bitrate_kbps,
                qp_base=self.cfg.qp_base,
                template=self.cfg.encoder_template,
            )
            out = {
                "frame_count": len(video),
                "offsets": dqp.tolist(),
                "real_ratio": float(np.mean(real_ratios)),
            }
            if self.cfg.encoder_template:
                workdir = Path(self.cfg.store_dir) / "previews" / doc["session_id"]
                out["encoded_path"] = str(encode_mod.drive_encoder(job, workdir))
            report = encode_mod.mock_encode(job)
            out["ratio"] = report.ratio
            out["clamp_count"] = report.clamp_count
            return out

    # -- comparison gate ----------------------------------------------

    def start_comparison(self, session_id: str, writer_token=_TRUSTED) -> dict:
        with self._lock_for(session_id):
            doc = self._require(session_id)
            if writer_token is not _TRUSTED:
                self.validate_writer(doc, writer_token)
            if doc["state"] not in ("painting", "comparing"):
                raise ApiError(409, f"cannot start comparison from {doc['state']}")
            key = secrets.token_hex(8)
            with self._global:
                reencoded_side = "A" if self._shuffle_rng.random() < 0.5 else "B"
            doc["shuffle"] = {"key": key, "reencoded_side": reencoded_side}
            doc["state"] = "comparing"
            self.store.save(doc)
            return {"shuffle_key": key, "sides": ["A", "B"], "state": "comparing"}

    def submit_comparison(
        self, session_id: str, choice: str, shuffle_key: str, writer_token=_TRUSTED
    ) -> dict:
        with self._lock_for(session_id):
            doc = self._require(session_id)
            if writer_token is not _TRUSTED:
                self.validate_writer(doc, writer_token)
            if doc["state"] != "comparing":
                raise ApiError(409, f"no comparison in progress (state {doc['state']})")
            shuffle = doc.get("shuffle")
            if not shuffle or shuffle_key != shuffle["key"]:
                raise ApiError(400, "unknown or stale shuffle key")
            if choice not in ("A", "B"):
                raise ApiError(400, f"choice must be A or B, got {choice!r}")
            accepted = choice == shuffle["reencoded_side"]
            doc["verdicts"].append(
                {"shuffle_key": shuffle_key, "choice": choice, "accepted": accepted}
            )
            doc["shuffle"] = None
            doc["state"] = "accepted" if accepted else "painting"
            self.store.save(doc)
            return {"state": "accepted" if accepted else "rejected", "accepted": accepted}


# --- HTTP plumbing ---------------------------------------------------------

_ROUTES = [
    ("POST", re.compile(r"^/sessions$"), "create_session"),
    ("GET", re.compile(r"^/sessions/([0-9a-f]+)$"), "get_session"),
    ("GET", re.compile(r"^/sessions/([0-9a-f]+)/map/(\d+)$"), "get_map"),
    ("POST", re.compile(r"^/sessions/([0-9a-f]+)/strokes$"), "post_strokes"),
    ("POST", re.compile(r"^/sessions/([0-9a-f]+)/preview$"), "post_preview"),
    ("POST", re.compile(r"^/sessions/([0-9a-f]+)/comparison$"), "post_comparison"),
    ("GET", re.compile(r"^/videos$"), "list_videos"),
    ("GET", re.compile(r"^/videos/([^/]+)/frame/(\d+)$"), "get_frame"),
    ("GET", re.compile(r"^/resume/([^/]+)/([^/]+)$"), "resume"),
]


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"

    @property
    def service(self) -> AnnotationService:
        return self.server.annotation_service

    def log_message(self, fmt, *args):  # quiet by default
        pass

    def _json_body(self) -> dict:
        length = int(self.headers.get("Content-Length") or 0)
        if length == 0:
            return {}
        try:
            return json.loads(self.rfile.read(length))
        except json.JSONDecodeError as e:
            raise ApiError(400, f"invalid JSON body: {e}") from None

    def _send(self, status: int, payload: bytes, content_type: str):
        self.send_response(status)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(payload)))
        self.send_header("Access-Control-Allow-Origin", "*")
        self.end_headers()
        self.wfile.write(payload)

    def _send_json(self, obj, status: int = 200):
        self._send(status, json.dumps(obj).encode(), "application/json")

    def _dispatch(self, method: str):
        path = self.path.split("?", 1)[0]
        try:
            for verb, pattern, name in _ROUTES:
                if verb != method:
                    continue
                m = pattern.match(path)
                if m:
                    getattr(self, name)(*m.groups())
                    return
            if method == "GET" and self._maybe_static(path):
                return
            raise ApiError(404, f"no route for {method} {path}")
        except ApiError as e:
            self._send_json({"error": e.message}, e.status)
        except Exception as e:  # pragma: no cover - defensive
            self._send_json({"error": f"internal error: {e}"}, 500)

    def _maybe_static(self, path: str) -> bool:
        root = getattr(self.server, "static_dir", None)
        if root is None:
            return False
        rel = "index.html" if path in ("/", "") else path.lstrip("/")
        target = (Path(root) / rel).resolve()
        if not str(target).startswith(str(Path(root).resolve())) or not target.is_file():
            return False
        ctype = {
            ".html": "text/html",
            ".js": "text/javascript",
            ".css": "text/css",
            ".map": "application/json",
        }.get(target.suffix, "application/octet-stream")
        self._send(200, target.read_bytes(), ctype)
        return True

    def do_GET(self):
        self._dispatch("GET")

    def do_POST(self):
        self._dispatch("POST")

    def do_OPTIONS(self):
        # CORS preflight for browser clients served from another origin
        self.send_response(204)
        self.send_header("Access-Control-Allow-Origin", "*")
        self.send_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS")
        self.send_header("Access-Control-Allow-Headers", "Content-Type")
        self.send_header("Content-Length", "0")
        self.end_headers()

    # -- route handlers -------------------------------------------------

    def create_session(self):
        body = self._json_body()
        doc = self.service.open_session(
            body.get("annotator", ""),
            body.get("video_id", ""),
            takeover=bool(body.get("takeover")),
        )
        self._send_json(doc, 201)

    def get_session(self, session_id):
        self._send_json(self.service.get_session(session_id))

    def get_map(self, session_id, frame):
        payload = self.service.session_map(session_id, int(frame))
        self._send(200, payload, "image/x-portable-graymap")

    def post_strokes(self, session_id):
        body = self._json_body()
        strokes = body.get("strokes")
        if not isinstance(strokes, list) or not strokes:
            raise ApiError(400, "body must carry a non-empty strokes list")
        self._send_json(
            self.service.add_strokes(session_id, strokes, body.get("writer_token"))
        )

    def post_preview(self, session_id):
        self._send_json(self.service.preview(session_id))

    def post_comparison(self, session_id):
        body = self._json_body()
        if body.get("start"):
            self._send_json(
                self.service.start_comparison(session_id, body.get("writer_token"))
            )
        else:
            self._send_json(
                self.service.submit_comparison(
                    session_id,
                    body.get("choice", ""),
                    body.get("shuffle_key", ""),
                    body.get("writer_token"),
                )
            )

    def list_videos(self):
        self._send_json({"videos": self.service.list_videos()})

    def get_frame(self, video_id, frame):
        payload = self.service.frame_pgm(video_id, int(frame))
        self._send(200, payload, "image/x-portable-graymap")

    def resume(self, annotator, video_id):
        self._send_json(self.service.resume(annotator, video_id))


def make_server(
    cfg: ServiceConfig, host: str = "127.0.0.1", port: int = 0, static_dir=None
) -> ThreadingHTTPServer:
    """A ready-to-run threading HTTP server bound to (host, port)."""
    server = ThreadingHTTPServer((host, port), _Handler)
    server.annotation_service = AnnotationService(cfg)
    server.static_dir = static_dir
    return server


def serve_forever(cfg: ServiceConfig, host: str, port: int, static_dir=None) -> None:
    server = make_server(cfg, host, port, static_dir)
    print(
        f"annotation service listening on http://{host}:{server.server_address[1]}",
        flush=True,
    )
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        server.shutdown()
