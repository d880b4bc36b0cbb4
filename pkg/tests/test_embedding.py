import http.server
import json
import threading

import numpy as np
import pytest

from pointscene.archetypes import OBJECT_SHAPES, canonical_object_points, object_shape_points
from pointscene.embedding import (
    RemoteEmbeddingBackend,
    RemoteEmbeddingError,
    StubEmbeddingBackend,
    cosine_similarity_matrix,
    make_backend,
)
from pointscene.snap import SnapshotImage


@pytest.fixture
def stub():
    return StubEmbeddingBackend(seed=0)


def white_image(w=336, h=336):
    return SnapshotImage(w, h, np.full((h, w, 3), 255, dtype=np.uint8))


# --------------------------------------------------------------- stub backend


def test_text_embedding_deterministic(stub):
    a = stub.embed_text("kitchen")
    b = stub.embed_text("kitchen")
    np.testing.assert_array_equal(a, b)
    fresh = StubEmbeddingBackend(seed=0).embed_text("kitchen")
    np.testing.assert_array_equal(a, fresh)


def test_all_kinds_are_unit_vectors(stub):
    vecs = [
        stub.embed_text("anything at all"),
        stub.embed_image(white_image()),
        stub.embed_points(np.random.default_rng(0).normal(size=(50, 3))),
    ]
    for v in vecs:
        assert v.shape == (stub.dim,)
        assert abs(np.linalg.norm(v) - 1.0) < 1e-6
        assert np.all(np.isfinite(v))


def test_distinct_text_gives_distinct_vectors(stub):
    a = stub.embed_text("zorbling contraption")
    b = stub.embed_text("zorbling contraption!")
    assert float(a @ b) < 0.999


def test_pole_vs_slab_archetype_separation(stub):
    pole = stub.embed_points(canonical_object_points("pole"))
    slab = stub.embed_points(canonical_object_points("slab"))
    cos = float(pole @ slab)
    assert cos == pytest.approx(0.5956683536390344, abs=1e-9)
    assert cos < 0.9


def test_archetype_text_matches_planted_geometry(stub):
    names = list(OBJECT_SHAPES)
    text_vecs = [stub.embed_text(n) for n in names]
    rng = np.random.default_rng(21)
    for name in names:
        inst = object_shape_points(name, 700, np.random.default_rng(rng.integers(2**31)))
        inst = inst + rng.uniform(-3, 3, 3)
        sims = cosine_similarity_matrix([stub.embed_points(inst)], text_vecs)[0]
        assert names[int(np.argmax(sims))] == name


def test_points_embedding_ignores_scale_and_translation(stub):
    pts = object_shape_points("chair", 400, np.random.default_rng(3))
    a = stub.embed_points(pts)
    b = stub.embed_points(pts * 2.5 + np.array([10.0, -4.0, 2.0]))
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_empty_payloads_rejected(stub):
    with pytest.raises(ValueError):
        stub.embed_text("   ")
    with pytest.raises(ValueError):
        stub.embed_points(np.empty((0, 3)))


# ------------------------------------------------------------- cosine matrix


def test_cosine_identical_and_orthogonal():
    e1 = np.array([1.0, 0.0, 0.0])
    e2 = np.array([0.0, 1.0, 0.0])
    m = cosine_similarity_matrix([e1, e2], [e1, e2])
    assert m[0, 0] == pytest.approx(1.0)
    assert m[0, 1] == pytest.approx(0.0)


def test_cosine_matches_double_loop_oracle():
    rng = np.random.default_rng(8)
    a = [v / np.linalg.norm(v) for v in rng.normal(size=(5, 16))]
    b = [v / np.linalg.norm(v) for v in rng.normal(size=(7, 16))]
    m = cosine_similarity_matrix(a, b)
    for i in range(5):
        for j in range(7):
            expected = sum(a[i][k] * b[j][k] for k in range(16))
            assert abs(m[i, j] - expected) < 1e-12
    assert m.min() >= -1.0 - 1e-12 and m.max() <= 1.0 + 1e-12


def test_cosine_self_matrix_symmetric_unit_diagonal(stub):
    vecs = [stub.embed_text(w) for w in ["a", "b", "c", "d"]]
    m = cosine_similarity_matrix(vecs, vecs)
    np.testing.assert_allclose(m, m.T, atol=1e-9)
    np.testing.assert_allclose(np.diag(m), 1.0, atol=1e-9)


def test_cosine_dim_mismatch():
    with pytest.raises(ValueError):
        cosine_similarity_matrix([np.ones(3)], [np.ones(4)])


# ------------------------------------------------------------ remote backend


class _EmbedHandler(http.server.BaseHTTPRequestHandler):
    fail_next = 0
    scale = 3.0  # returned vectors are deliberately non-unit
    flip_determinism = False
    calls = 0

    def do_POST(self):
        cls = _EmbedHandler
        cls.calls += 1
        if cls.fail_next > 0:
            cls.fail_next -= 1
            self.send_error(500, "transient")
            return
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        rng = np.random.default_rng(abs(hash(json.dumps(body, sort_keys=True))) % 2**31)
        vec = rng.normal(size=8)
        if cls.flip_determinism:
            vec = vec + cls.calls  # nondeterministic service
        vec = cls.scale * vec / np.linalg.norm(vec)
        payload = json.dumps({"dim": 8, "vector": vec.tolist()}).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def log_message(self, *args):
        pass


@pytest.fixture
def embed_server():
    _EmbedHandler.fail_next = 0
    _EmbedHandler.flip_determinism = False
    _EmbedHandler.calls = 0
    server = http.server.ThreadingHTTPServer(("127.0.0.1", 0), _EmbedHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_port}"
    server.shutdown()


def test_remote_backend_protocol_and_renormalization(embed_server):
    backend = RemoteEmbeddingBackend(embed_server)
    v = backend.embed_text("hello")
    assert v.shape == (8,)
    assert abs(np.linalg.norm(v) - 1.0) < 1e-9
    assert backend.dim == 8
    pts = np.random.default_rng(0).normal(size=(10, 3))
    assert abs(np.linalg.norm(backend.embed_points(pts)) - 1.0) < 1e-9
    img = white_image(32, 32)
    assert abs(np.linalg.norm(backend.embed_image(img)) - 1.0) < 1e-9


def test_remote_backend_retries_transient_failures(embed_server):
    _EmbedHandler.fail_next = 2
    backend = RemoteEmbeddingBackend(embed_server, max_retries=2)
    v = backend.embed_text("retry me")
    assert abs(np.linalg.norm(v) - 1.0) < 1e-9


def test_remote_backend_gives_up_after_retries(embed_server):
    _EmbedHandler.fail_next = 10
    backend = RemoteEmbeddingBackend(embed_server, max_retries=1)
    with pytest.raises(RemoteEmbeddingError):
        backend.embed_text("never works")


def test_remote_nondeterminism_surfaces_as_warning(embed_server):
    _EmbedHandler.flip_determinism = True
    backend = RemoteEmbeddingBackend(embed_server)
    first = backend.embed_text("drift")
    with pytest.warns(UserWarning, match="different vector"):
        second = backend.embed_text("drift")
    np.testing.assert_array_equal(first, second)  # memo wins


def test_make_backend_factory():
    assert isinstance(make_backend("stub"), StubEmbeddingBackend)
    assert isinstance(make_backend("remote", url="http://x"), RemoteEmbeddingBackend)
    with pytest.raises(ValueError):
        make_backend("remote")
    with pytest.raises(ValueError):
        make_backend("neural-lace")
