"""Policy backends: stub determinism and distribution, adapters, retry."""

from __future__ import annotations

import http.server
import json
import sys
import threading
from collections import Counter
from datetime import date

import pytest

from cofprm import cof, judge, policy
from cofprm.corpus import Problem, TestCase as Case
from cofprm.policy import (
    HTTPBackend,
    PolicyError,
    PolicyRequest,
    StubBackend,
    StubSpec,
    SubprocessBackend,
)


def request_for(problem_id, seed=0, kind="full_solution", prefix=""):
    return PolicyRequest(
        kind=kind, prompt="prompt", prefix=prefix, temperature=1.0,
        seed=seed, problem_id=problem_id,
    )


class TestRequest:
    def test_wire_format_is_exactly_five_fields(self):
        wire = request_for("p", seed=3).to_wire()
        assert wire == {
            "kind": "full_solution", "prompt": "prompt", "prefix": "",
            "temperature": 1.0, "seed": 3,
        }

    def test_unknown_kind_rejected(self):
        with pytest.raises(PolicyError, match="kind"):
            PolicyRequest(kind="dream", prompt="", prefix="", temperature=1.0, seed=0)

    def test_negative_temperature_rejected(self):
        with pytest.raises(PolicyError, match="temperature"):
            PolicyRequest(kind="full_solution", prompt="", prefix="", temperature=-0.1, seed=0)

    def test_pass_probability_bounds(self):
        with pytest.raises(PolicyError, match="pass_probability"):
            StubSpec(pass_probability=1.2, template_bank={})


class TestStubBackend:
    def test_same_request_same_bytes(self, stub_backend):
        req = request_for("add-two-ints", seed=11)
        assert stub_backend.sample(req) == stub_backend.sample(req)

    def test_different_seeds_can_differ(self, stub_backend):
        draws = {stub_backend.sample(request_for("add-two-ints", seed=s)) for s in range(40)}
        assert len(draws) > 1

    def test_unknown_problem_is_config_error(self, stub_backend):
        with pytest.raises(PolicyError, match="no templates"):
            stub_backend.sample(request_for("made-up-problem"))

    def test_missing_problem_id_is_config_error(self, stub_backend):
        req = PolicyRequest(kind="full_solution", prompt="", prefix="", temperature=1.0, seed=0)
        with pytest.raises(PolicyError, match="problem_id"):
            stub_backend.sample(req)

    def test_pass_probability_controls_pool_frequency(self, template_bank):
        # 1000 draws at p = 0.5; a 3-sigma binomial band is about +/- 0.047.
        backend = StubBackend(StubSpec(0.5, template_bank))
        correct = set(template_bank["add-two-ints"]["correct"])
        hits = sum(
            backend.sample(request_for("add-two-ints", seed=s)) in correct
            for s in range(1000)
        )
        assert 0.453 <= hits / 1000 <= 0.547

    def test_extreme_probabilities_are_exact(self, template_bank):
        always = StubBackend(StubSpec(1.0, template_bank))
        never = StubBackend(StubSpec(0.0, template_bank))
        correct = set(template_bank["add-two-ints"]["correct"])
        for s in range(25):
            assert always.sample(request_for("add-two-ints", seed=s)) in correct
            assert never.sample(request_for("add-two-ints", seed=s)) not in correct

    def test_prefix_completion_shadows_prefix_definitions(self, template_bank, mini_store):
        # A completion is a whole template appended after the prefix; its
        # later defs rebind the prefix's names, so the judged behavior is
        # the template's. With p = 1.0 every completed prefix must pass.
        problem = mini_store.get("add-two-ints")
        backend = StubBackend(StubSpec(1.0, template_bank))
        source = template_bank["add-two-ints"]["correct"][0]
        decomp = cof.decompose(source)
        prefix = cof.prefixes(problem, decomp)[0]
        code = cof.prefix_code(prefix, problem)
        completion = backend.sample(
            request_for("add-two-ints", seed=5, kind="prefix_completion", prefix=code)
        )
        verdict = judge.run(code + completion, problem.tests, vehicle="inprocess")
        assert verdict.passed

    def test_completion_glue_keeps_line_structure(self, template_bank):
        backend = StubBackend(StubSpec(1.0, template_bank))
        ending_newline = backend.sample(
            request_for("add-two-ints", kind="prefix_completion", prefix="x = 1\n")
        )
        assert ending_newline.startswith("\n") and not ending_newline.startswith("\n\n")
        unterminated = backend.sample(
            request_for("add-two-ints", kind="prefix_completion", prefix="x = 1")
        )
        assert unterminated.startswith("\n\n")


ECHO_ADAPTER = """\
import json, sys
req = json.load(sys.stdin)
print(json.dumps({"completion": "print(%d)" % req["seed"]}))
"""

FLAKY_ADAPTER = """\
import json, os, sys
marker = sys.argv[1]
if not os.path.exists(marker):
    open(marker, "w").close()
    sys.exit(3)
json.load(sys.stdin)
print(json.dumps({"completion": "ok"}))
"""


class TestSubprocessBackend:
    def test_round_trip(self, tmp_path):
        script = tmp_path / "adapter.py"
        script.write_text(ECHO_ADAPTER)
        backend = SubprocessBackend([sys.executable, str(script)])
        assert backend.sample(request_for("p", seed=42)) == "print(42)"

    def test_nonzero_exit_is_transient(self, tmp_path):
        script = tmp_path / "adapter.py"
        script.write_text("import sys; sys.exit(9)\n")
        backend = SubprocessBackend([sys.executable, str(script)])
        with pytest.raises(PolicyError) as err:
            backend.sample(request_for("p"))
        assert err.value.retryable

    def test_malformed_payload_is_transient(self, tmp_path):
        script = tmp_path / "adapter.py"
        script.write_text("print('not json')\n")
        backend = SubprocessBackend([sys.executable, str(script)])
        with pytest.raises(PolicyError, match="malformed"):
            backend.sample(request_for("p"))

    def test_missing_command_is_config_error(self):
        backend = SubprocessBackend(["/no/such/binary"])
        with pytest.raises(PolicyError) as err:
            backend.sample(request_for("p"))
        assert not err.value.retryable

    def test_retry_recovers_from_transient_failure(self, tmp_path):
        script = tmp_path / "adapter.py"
        script.write_text(FLAKY_ADAPTER)
        marker = tmp_path / "attempted.marker"
        backend = SubprocessBackend([sys.executable, str(script), str(marker)])
        out = policy.sample(request_for("p"), backend, attempts=3, base_delay=0.001)
        assert out == "ok"

    def test_retry_exhaustion_raises_last_error(self, tmp_path):
        script = tmp_path / "adapter.py"
        script.write_text("import sys; sys.exit(7)\n")
        backend = SubprocessBackend([sys.executable, str(script)])
        with pytest.raises(PolicyError, match="exited 7"):
            policy.sample(request_for("p"), backend, attempts=2, base_delay=0.001)

    def test_config_errors_are_not_retried(self, tmp_path, monkeypatch):
        calls = []

        class Broken:
            def sample(self, request):
                calls.append(1)
                raise PolicyError("config", "bad setup")

        with pytest.raises(PolicyError, match="bad setup"):
            policy.sample(request_for("p"), Broken(), attempts=3, base_delay=0.001)
        assert len(calls) == 1


class _Endpoint(http.server.BaseHTTPRequestHandler):
    status = 200
    seen: list[dict] = []

    def do_POST(self):
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        type(self).seen.append({"body": body, "auth": self.headers.get("Authorization")})
        payload = json.dumps(
            {"choices": [{"message": {"content": f"echo:{body['messages'][0]['content'][:20]}"}}]}
        ).encode()
        self.send_response(type(self).status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def log_message(self, *args):
        pass


@pytest.fixture()
def endpoint():
    _Endpoint.status = 200
    _Endpoint.seen = []
    server = http.server.ThreadingHTTPServer(("127.0.0.1", 0), _Endpoint)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_address[1]}/v1/chat/completions", _Endpoint
    server.shutdown()


class TestHTTPBackend:
    def test_round_trip_carries_model_auth_and_prefix(self, endpoint):
        url, handler = endpoint
        backend = HTTPBackend(url, model="m-1", api_key="k-secret")
        out = backend.sample(
            request_for("p", kind="prefix_completion", prefix="def f():\n    pass\n")
        )
        assert out.startswith("echo:")
        sent = handler.seen[0]
        assert sent["auth"] == "Bearer k-secret"
        assert sent["body"]["model"] == "m-1"
        assert sent["body"]["messages"][0]["content"].endswith("def f():\n    pass\n")

    def test_server_error_is_transient(self, endpoint):
        url, handler = endpoint
        handler.status = 503
        backend = HTTPBackend(url)
        with pytest.raises(PolicyError) as err:
            backend.sample(request_for("p"))
        assert err.value.retryable

    def test_client_error_is_config(self, endpoint):
        url, handler = endpoint
        handler.status = 401
        backend = HTTPBackend(url)
        with pytest.raises(PolicyError) as err:
            backend.sample(request_for("p"))
        assert not err.value.retryable

    def test_unreachable_endpoint_is_transient(self):
        backend = HTTPBackend("http://127.0.0.1:9/none", timeout=0.5)
        with pytest.raises(PolicyError) as err:
            backend.sample(request_for("p"))
        assert err.value.retryable

    def test_empty_url_rejected(self):
        with pytest.raises(PolicyError, match="url"):
            HTTPBackend("")


class TestGenerateCandidates:
    def test_count_and_determinism(self, stub_backend, mini_store):
        problem = mini_store.get("add-two-ints")
        a = policy.generate_candidates(problem, 4, stub_backend, seed_base=100)
        b = policy.generate_candidates(problem, 4, stub_backend, seed_base=100)
        assert len(a) == 4 and a == b

    def test_seed_base_shifts_draws(self, stub_backend, mini_store):
        problem = mini_store.get("add-two-ints")
        a = policy.generate_candidates(problem, 8, stub_backend, seed_base=0)
        b = policy.generate_candidates(problem, 8, stub_backend, seed_base=1)
        assert a[1:] == b[:-1]  # overlapping seed ranges share draws

    def test_zero_candidates_rejected(self, stub_backend, mini_store):
        with pytest.raises(PolicyError, match="count"):
            policy.generate_candidates(mini_store.get("add-two-ints"), 0, stub_backend, seed_base=0)


class TestTemplateBank:
    def test_bank_covers_mini_corpus(self, template_bank, mini_store):
        assert set(template_bank) == set(mini_store.ids())
        for pid, pools in template_bank.items():
            assert pools["correct"], pid
            assert pools["broken"], pid

    def test_reference_solutions_pass_their_tests(self, template_bank, mini_store):
        for problem in mini_store:
            for source in template_bank[problem.id]["correct"]:
                verdict = judge.run(source, problem.tests, vehicle="inprocess")
                assert verdict.passed, (problem.id, verdict.per_test)

    def test_broken_variants_fail_their_tests(self, template_bank, mini_store):
        for problem in mini_store:
            for source in template_bank[problem.id]["broken"]:
                verdict = judge.run(source, problem.tests, vehicle="inprocess")
                assert not verdict.passed, problem.id
