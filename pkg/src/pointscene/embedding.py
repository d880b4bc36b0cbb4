"""Unit-vector embeddings for text, images, and point sets.

One backend contract with two implementations: a deterministic stub for
tests and offline runs, and an HTTP client for out-of-process encoders.
All backends return L2-normalized vectors of a single fixed dimension and
are deterministic for byte-identical payloads.
"""

from __future__ import annotations

import base64
import io
import json
import threading
import urllib.error
import urllib.request
import warnings

import numpy as np

from .archetypes import OBJECT_SHAPES, ROOM_BAND_CODES, canonical_object_points, canonical_room_image
from .snap import SnapshotImage
from .util import derive_seed

UNIT_TOL = 1e-6
STUB_DIM = 64


def as_unit(values) -> np.ndarray:
    """Validate and L2-normalize a vector; rejects zero or non-finite input."""
    vec = np.asarray(values, dtype=np.float64).reshape(-1)
    if not np.all(np.isfinite(vec)):
        raise ValueError("embedding vector has non-finite values")
    norm = float(np.linalg.norm(vec))
    if norm == 0.0:
        raise ValueError("embedding vector has zero norm")
    return vec / norm


def cosine_similarity_matrix(a, b) -> np.ndarray:
    """Pairwise dot products of two lists of same-dimension unit vectors."""
    a_mat = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b_mat = np.atleast_2d(np.asarray(b, dtype=np.float64))
    if a_mat.shape[1] != b_mat.shape[1]:
        raise ValueError(
            f"dimension mismatch: {a_mat.shape[1]} vs {b_mat.shape[1]}"
        )
    return a_mat @ b_mat.T


class EmbeddingBackend:
    """Contract: three embedding operations sharing one output dimension,
    deterministic for identical inputs, safe for concurrent calls."""

    dim: int

    def embed_text(self, text: str) -> np.ndarray:
        raise NotImplementedError

    def embed_image(self, image: SnapshotImage) -> np.ndarray:
        raise NotImplementedError

    def embed_points(self, points) -> np.ndarray:
        raise NotImplementedError


def _points_array(payload) -> np.ndarray:
    pts = getattr(payload, "points", payload)
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        raise ValueError("cannot embed an empty point set")
    return pts


def _image_pixels(image) -> np.ndarray:
    px = image.pixels if isinstance(image, SnapshotImage) else np.asarray(image)
    px = np.asarray(px)
    if px.ndim != 3 or px.shape[2] != 3 or px.size == 0:
        raise ValueError("image payload must be a (h, w, 3) RGB array")
    return px


class StubEmbeddingBackend(EmbeddingBackend):
    """Deterministic 64-d test backend.

    Text: for words in the built-in archetype vocabulary, the embedding of
    that archetype's canonical geometry (so labels align with planted
    fixtures); any other string gets a seeded-hash pseudorandom unit vector.
    Images: normalized 8x8 downsampled intensity grid. Point sets: normalized
    32-bin pairwise-distance histogram plus 32-bin height histogram.
    """

    dim = STUB_DIM

    def __init__(self, seed: int = 0):
        self.seed = seed
        self._text_cache: dict[str, np.ndarray] = {}
        self._lock = threading.Lock()

    def embed_text(self, text: str) -> np.ndarray:
        if not isinstance(text, str) or not text.strip():
            raise ValueError("cannot embed empty text")
        with self._lock:
            cached = self._text_cache.get(text)
        if cached is not None:
            return cached
        key = text.strip().lower()
        if key in ROOM_BAND_CODES:
            vec = self.embed_image(canonical_room_image(key))
        elif key in OBJECT_SHAPES:
            vec = self.embed_points(canonical_object_points(key))
        else:
            rng = np.random.default_rng(derive_seed("stub-text", self.seed, text))
            vec = as_unit(rng.standard_normal(self.dim))
        vec.setflags(write=False)
        with self._lock:
            self._text_cache[text] = vec
        return vec

    def embed_image(self, image) -> np.ndarray:
        px = _image_pixels(image)
        gray = px.astype(np.float64).mean(axis=2) / 255.0
        rows = np.array_split(np.arange(gray.shape[0]), 8)
        cols = np.array_split(np.arange(gray.shape[1]), 8)
        grid = np.array([[gray[np.ix_(r, c)].mean() for c in cols] for r in rows])
        vec = grid.reshape(-1)
        if np.linalg.norm(vec) == 0.0:
            vec = np.ones(self.dim)
        return as_unit(vec)

    def embed_points(self, payload) -> np.ndarray:
        pts = _points_array(payload)
        centered = pts - pts.mean(axis=0)
        peak = float(np.linalg.norm(centered, axis=1).max())
        if peak > 0:
            centered = centered / peak
        if len(centered) > 2048:
            rng = np.random.default_rng(derive_seed("stub-points", len(centered)))
            centered = centered[rng.choice(len(centered), 2048, replace=False)]
        if len(centered) > 1:
            diff = centered[:, None, :] - centered[None, :, :]
            dists = np.sqrt((diff**2).sum(axis=2))
            iu = np.triu_indices(len(centered), k=1)
            dist_hist = np.histogram(dists[iu], bins=32, range=(0.0, 2.0))[0].astype(float)
        else:
            dist_hist = np.zeros(32)
        height_hist = np.histogram(centered[:, 2], bins=32, range=(-1.0, 1.0))[0].astype(float)
        # Hellinger scaling: sqrt of the normalized histograms, so cosine acts
        # like a Bhattacharyya overlap and low-mass bins stay discriminative.
        if dist_hist.sum() > 0:
            dist_hist = np.sqrt(dist_hist / dist_hist.sum())
        if height_hist.sum() > 0:
            height_hist = np.sqrt(height_hist / height_hist.sum())
        vec = np.concatenate([dist_hist, height_hist])
        if np.linalg.norm(vec) == 0.0:
            vec = np.ones(self.dim)
        return as_unit(vec)


class RemoteEmbeddingError(RuntimeError):
    """Remote /embed service failed or returned an unusable response."""


class RemoteEmbeddingBackend(EmbeddingBackend):
    """Client for an out-of-process embedding service.

    Protocol: POST <url>/embed with JSON {"kind": "text"|"image"|"points",
    "text": str | "image_png_b64": str | "points": [[x,y,z], ...]};
    response {"dim": d, "vector": [d floats]}. Received vectors are
    renormalized; zero vectors are rejected. Responses are memoized per
    payload, and a repeat call that would disagree with the memo surfaces
    as a warning rather than silent nondeterminism.
    """

    def __init__(self, url: str, timeout: float = 10.0, max_retries: int = 2, max_inflight: int = 4):
        self.url = url.rstrip("/")
        self.timeout = timeout
        self.max_retries = max_retries
        self._sem = threading.Semaphore(max_inflight)
        self._lock = threading.Lock()
        self._memo: dict[bytes, np.ndarray] = {}
        self._dim: int | None = None

    @property
    def dim(self) -> int:
        if self._dim is None:
            raise RemoteEmbeddingError("dimension unknown before the first request")
        return self._dim

    def embed_text(self, text: str) -> np.ndarray:
        if not isinstance(text, str) or not text.strip():
            raise ValueError("cannot embed empty text")
        return self._request({"kind": "text", "text": text})

    def embed_image(self, image) -> np.ndarray:
        px = _image_pixels(image)
        from PIL import Image

        buf = io.BytesIO()
        Image.fromarray(np.ascontiguousarray(px, dtype=np.uint8), mode="RGB").save(buf, format="PNG")
        b64 = base64.b64encode(buf.getvalue()).decode("ascii")
        return self._request({"kind": "image", "image_png_b64": b64})

    def embed_points(self, payload) -> np.ndarray:
        pts = _points_array(payload)
        return self._request({"kind": "points", "points": pts.tolist()})

    def _request(self, body: dict) -> np.ndarray:
        raw = json.dumps(body, sort_keys=True).encode("utf-8")
        with self._lock:
            memo = self._memo.get(raw)
        vec = self._post_with_retries(raw)
        with self._lock:
            if memo is None:
                self._memo[raw] = vec
            elif not np.array_equal(memo, vec):
                warnings.warn(
                    "remote embedding backend returned a different vector for an "
                    "identical payload; keeping the first response",
                    stacklevel=3,
                )
                return memo
        return vec

    def _post_with_retries(self, raw: bytes) -> np.ndarray:
        last_error: Exception | None = None
        for _ in range(self.max_retries + 1):
            try:
                return self._post_once(raw)
            except (urllib.error.URLError, TimeoutError, ConnectionError) as exc:
                last_error = exc
        raise RemoteEmbeddingError(f"embedding service unreachable: {last_error}")

    def _post_once(self, raw: bytes) -> np.ndarray:
        req = urllib.request.Request(
            self.url + "/embed", data=raw, headers={"Content-Type": "application/json"}
        )
        with self._sem:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                payload = json.loads(resp.read().decode("utf-8"))
        if "vector" not in payload or "dim" not in payload:
            raise RemoteEmbeddingError("response lacks 'dim'/'vector' fields")
        vec = np.asarray(payload["vector"], dtype=np.float64)
        if vec.shape != (int(payload["dim"]),):
            raise RemoteEmbeddingError("vector length disagrees with declared dim")
        try:
            vec = as_unit(vec)
        except ValueError as exc:
            raise RemoteEmbeddingError(f"unusable vector from service: {exc}") from exc
        with self._lock:
            if self._dim is None:
                self._dim = len(vec)
            elif self._dim != len(vec):
                raise RemoteEmbeddingError(
                    f"service changed dimension: {self._dim} -> {len(vec)}"
                )
        vec.setflags(write=False)
        return vec


def make_backend(name: str, url: str | None = None, seed: int = 0) -> EmbeddingBackend:
    """Backend factory for configuration: 'stub' or 'remote' (needs url)."""
    if name == "stub":
        return StubEmbeddingBackend(seed=seed)
    if name == "remote":
        if not url:
            raise ValueError("remote backend requires a service URL")
        return RemoteEmbeddingBackend(url)
    raise ValueError(f"unknown embedding backend {name!r}")
