import json
import re
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sctkit.comments import (
    API_KEY_ENV,
    CommentCache,
    CommentClient,
    CommentedSource,
    CommentProviderConfig,
    check_code_unchanged,
    comment_source,
    extract_code,
    generate_comments,
    normalize,
    strip_comments,
)
from sctkit.errors import CacheMiss, MalformedResponse, ProviderUnavailable, UnterminatedCommentBlock
from sctkit.syntax import tokenize

SOURCE = "int f(int x)\n{\n    if (x) {}\n    return x;\n}"
COMMENTED = "int f(int x)\n{\n    // x is set\n    if (x) {}\n    // hand x back\n    return x;\n}"


# -- normalize ---------------------------------------------------------------

def test_normalize_removes_blank_lines():
    assert normalize("a\n\nb").text == "a\nb"


def test_normalize_triple_quotes():
    out = normalize("'''checks x'''\nif (x) {}")
    assert out.text == "// checks x\nif (x) {}"
    assert out.comment_rows == {0: "checks x"}


def test_normalize_idempotent_on_normalized():
    once = normalize(COMMENTED)
    assert once.text == COMMENTED
    assert normalize(once.text) == once


def test_normalize_hoists_trailing_comment():
    out = normalize("int f() {\n    x = 1; // one\n}")
    assert out.text == "int f() {\n    // one\n    x = 1;\n}"


def test_normalize_block_comment_lines():
    out = normalize("/* first\n * second */\nreturn 0;")
    assert out.text == "// first\n// second\nreturn 0;"
    assert out.comment_rows == {0: "first", 1: "second"}


def test_normalize_inline_block_keeps_tokens_apart():
    out = normalize("int/* t */x;")
    assert out.text == "// t\nint x;"


def test_normalize_ignores_comment_markers_in_literals():
    src = 'puts("// no"); c = \'/\'; s = "/* no */";'
    out = normalize(src)
    assert out.text == src and out.comment_rows == {}


def test_normalize_multiline_triple_block():
    out = normalize("    '''\n    reads the header\n    then the body\n    '''\n    parse(h);")
    assert out.text == "    // reads the header\n    // then the body\n    parse(h);"


@pytest.mark.parametrize("raw", ["x; /* open", "'''never closed\nx;"])
def test_normalize_unterminated(raw):
    with pytest.raises(UnterminatedCommentBlock):
        normalize(raw)


def test_normalize_crlf():
    assert normalize("a;\r\n\r\nb;").text == "a;\nb;"


def test_normalize_drops_empty_comments():
    assert normalize("//\n/**/\nx;").text == "x;"


def test_strip_comments():
    assert strip_comments(COMMENTED) == SOURCE.replace("\n\n", "\n")
    assert tokenize(strip_comments(COMMENTED)) == tokenize(SOURCE)


_pieces = st.sampled_from([
    "x = 1;", "    y++;", "", "   ", "// note", "/* block */", "/* a\n b */", "'''tq'''",
    "'''\nmulti\n'''", "z = 2; // tail", 'puts("// str");', "w = '\\'';", "\t\tif (a) b();",
])


@settings(max_examples=200, deadline=None)
@given(st.lists(_pieces, max_size=10))
def test_normalize_properties(parts):
    raw = "\n".join(parts)
    once = normalize(raw)
    assert normalize(once.text).text == once.text
    assert all(line.strip() for line in once.lines)
    assert "'''" not in once.text
    for row in once.comment_rows:
        assert once.lines[row].lstrip().startswith("// ")
    assert tokenize(once.code_text()) == tokenize(re.sub(r"'''.*?'''", " ", raw, flags=re.S))


# -- cache -------------------------------------------------------------------

def test_cache_layout(tmp_path):
    import hashlib

    cache = CommentCache(tmp_path)
    h = hashlib.sha256(SOURCE.encode()).hexdigest()
    p = cache.put(SOURCE, COMMENTED)
    assert p == tmp_path / h[:2] / f"{h}.txt"
    assert cache.get(SOURCE) == COMMENTED
    assert cache.get(SOURCE + " ") is None
    assert not [q for q in p.parent.iterdir() if q.name.startswith(".tmp-")]


def test_cache_concurrent_writers_leave_whole_file(tmp_path):
    cache = CommentCache(tmp_path)
    bodies = [f"// writer {i}\n" + SOURCE * 50 for i in range(8)]
    threads = [threading.Thread(target=cache.put, args=(SOURCE, b)) for b in bodies]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert cache.get(SOURCE) in bodies


# -- providers ---------------------------------------------------------------

def test_fixture_hit_and_miss(fixture_client):
    fixture_client.cache.put(SOURCE, COMMENTED)
    got = fixture_client.generate(SOURCE)
    assert got.text == COMMENTED and got.origin == "fixture"
    with pytest.raises(CacheMiss):
        fixture_client.generate("int g() { return 1; }")


def test_generate_comments_function(tmp_path):
    cfg = CommentProviderConfig(kind="fixture", cache_dir=tmp_path)
    CommentCache(tmp_path).put(SOURCE, COMMENTED)
    assert generate_comments(SOURCE, cfg).text == COMMENTED


def test_config_validation(monkeypatch):
    monkeypatch.delenv(API_KEY_ENV, raising=False)
    with pytest.raises(ValueError):
        CommentProviderConfig(temperature=-0.1)
    with pytest.raises(ValueError):
        CommentProviderConfig(kind="carrier_pigeon")
    with pytest.raises(ValueError):
        CommentProviderConfig(kind="remote_chat").validate()
    with pytest.raises(ValueError):
        CommentProviderConfig(kind="remote_chat", endpoint="http://x").validate()
    monkeypatch.setenv(API_KEY_ENV, "k")
    CommentProviderConfig(kind="remote_chat", endpoint="http://x").validate()
    cfg = CommentProviderConfig()
    assert cfg.model_id == "gpt-3.5-turbo-0301" and cfg.temperature == 0


def test_extract_code():
    assert extract_code("```c\nint x;\n```") == "int x;\n"
    assert extract_code("Sure:\n```\nint y;\n```\nDone.") == "int y;\n"
    assert extract_code("int z;") == "int z;"
    with pytest.raises(MalformedResponse):
        extract_code("```\n\n```")


class StubChat:
    """Local chat-completion endpoint replaying scripted responses."""

    def __init__(self, script, delay=0.0):
        self.script = list(script)
        self.delay = delay
        self.requests = []
        self.in_flight = 0
        self.max_in_flight = 0
        self._lock = threading.Lock()
        stub = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
                with stub._lock:
                    stub.requests.append((dict(self.headers), body))
                    step = stub.script.pop(0) if len(stub.script) > 1 else stub.script[0]
                    stub.in_flight += 1
                    stub.max_in_flight = max(stub.max_in_flight, stub.in_flight)
                time.sleep(stub.delay)
                status, payload = step
                data = payload if isinstance(payload, bytes) else json.dumps(payload).encode()
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)
                with stub._lock:
                    stub.in_flight -= 1

            def log_message(self, *args):
                pass

        self.server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.url = f"http://127.0.0.1:{self.server.server_address[1]}/v1/chat/completions"
        self.thread = threading.Thread(target=self.server.serve_forever, daemon=True)

    def __enter__(self):
        self.thread.start()
        return self

    def __exit__(self, *exc):
        self.server.shutdown()
        self.server.server_close()


def chat(content):
    return 200, {"choices": [{"message": {"role": "assistant", "content": content}}]}


@pytest.fixture
def remote(tmp_path, monkeypatch):
    monkeypatch.setenv(API_KEY_ENV, "test-key")

    def make(url, **kw):
        kw.setdefault("backoff", 0.01)
        return CommentClient(
            CommentProviderConfig(kind="remote_chat", endpoint=url, cache_dir=tmp_path / "c", **kw)
        )

    return make


def test_remote_replay_then_cache(remote):
    with StubChat([chat("```c\n" + COMMENTED + "\n```")]) as stub:
        client = remote(stub.url)
        got = client.generate(SOURCE)
        assert got.origin == "remote"
        assert got.text == COMMENTED + "\n"
        headers, body = stub.requests[0]
        assert headers["Authorization"] == "Bearer test-key"
        assert body["model"] == "gpt-3.5-turbo-0301"
        assert body["temperature"] == 0
        assert [m["role"] for m in body["messages"]] == ["system", "user"]
        assert body["messages"][1]["content"] == SOURCE

        again = client.generate(SOURCE)
        assert again.origin == "cache" and again.text == got.text
        assert len(stub.requests) == 1


def test_cache_short_circuit_makes_no_network_calls(remote):
    client = remote("http://127.0.0.1:9/unreachable")
    client.cache.put(SOURCE, COMMENTED)
    got = client.generate(SOURCE)
    assert got.origin == "cache" and got.text == COMMENTED
    assert client.requests_sent == 0


def test_retries_on_server_errors(remote):
    with StubChat([(500, {"error": "boom"}), (429, {"error": "slow"}), chat(COMMENTED)]) as stub:
        got = remote(stub.url).generate(SOURCE)
        assert got.text == COMMENTED
        assert len(stub.requests) == 3


def test_gives_up_after_max_retries(remote):
    with StubChat([(503, {"error": "down"})]) as stub:
        with pytest.raises(ProviderUnavailable):
            remote(stub.url, max_retries=2).generate(SOURCE)
        assert len(stub.requests) == 3


def test_client_errors_are_not_retried(remote):
    with StubChat([(401, {"error": "bad key"})]) as stub:
        with pytest.raises(ProviderUnavailable):
            remote(stub.url).generate(SOURCE)
        assert len(stub.requests) == 1


def test_malformed_response(remote):
    with StubChat([(200, b"not json")]) as stub:
        with pytest.raises(MalformedResponse):
            remote(stub.url).generate(SOURCE)
    with StubChat([(200, {"choices": []})]) as stub:
        with pytest.raises(MalformedResponse):
            remote(stub.url).generate(SOURCE)


def test_connection_error_retried_then_unavailable(remote):
    client = remote("http://127.0.0.1:9/nothing-listens", max_retries=1, timeout=2)
    with pytest.raises(ProviderUnavailable):
        client.generate(SOURCE)
    assert client.requests_sent == 2


def test_in_flight_requests_are_bounded(remote):
    sources = [f"int f{i}(void) {{ return {i}; }}" for i in range(8)]
    with StubChat([chat("// c\nint z;")], delay=0.1) as stub:
        client = remote(stub.url, max_in_flight=2)
        threads = [threading.Thread(target=client.generate, args=(s,)) for s in sources]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert len(stub.requests) == 8
        assert stub.max_in_flight <= 2


# -- code-unchanged check ----------------------------------------------------

def test_check_code_unchanged():
    check_code_unchanged(SOURCE, normalize(COMMENTED))
    with pytest.raises(MalformedResponse):
        check_code_unchanged(SOURCE, normalize(COMMENTED.replace("return x", "return y")))


def test_comment_source_falls_back_when_code_changed(fixture_client):
    fixture_client.cache.put(SOURCE, COMMENTED.replace("if (x)", "if (x > 0)"))
    out = comment_source(SOURCE, fixture_client)
    assert out.comment_rows == {}
    assert tokenize(out.text) == tokenize(SOURCE)


def test_comment_source_falls_back_on_unterminated(fixture_client):
    fixture_client.cache.put(SOURCE, "/* never closed\n" + SOURCE)
    out = comment_source(SOURCE, fixture_client)
    assert out.comment_rows == {}


def test_comment_source_deterministic(fixture_client):
    fixture_client.cache.put(SOURCE, COMMENTED)
    a = comment_source(SOURCE, fixture_client)
    b = comment_source(SOURCE, fixture_client)
    assert a == b and isinstance(a, CommentedSource)
    assert a.comment_rows == {2: "x is set", 4: "hand x back"}
