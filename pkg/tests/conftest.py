import contextlib
import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from hybridmath.problems import AnswerForm, Problem


def make_problem(
    index: int = 0,
    dataset: str = "gsm8k",
    question: str = "What is 2+2?",
    gold: str = "4",
    choices: tuple[str, ...] = (),
) -> Problem:
    labels = "ABCDE"
    return Problem(
        id=f"{dataset}/{index:04d}",
        dataset=dataset,
        question=question,
        gold=gold,
        answer_form=AnswerForm.MULTI_CHOICE if choices else AnswerForm.OPEN_FORMED,
        choices=tuple(zip(labels, choices)) if choices else (),
    )


@pytest.fixture
def problem() -> Problem:
    return make_problem()


@pytest.fixture
def choice_problem() -> Problem:
    return make_problem(
        index=1,
        dataset="aqua",
        question="A train covers 60 miles in 8 minutes. What is its speed in mph?",
        gold="B",
        choices=("400", "450", "500", "550", "600"),
    )


@contextlib.contextmanager
def run_completion_server(reply_fn):
    """Local HTTP endpoint for backend tests.

    reply_fn(path, body, headers) -> (status, payload) decides each response.
    Yields the base URL.
    """

    class Handler(BaseHTTPRequestHandler):
        def do_POST(self):
            length = int(self.headers.get("Content-Length", 0))
            body = json.loads(self.rfile.read(length) or b"{}")
            status, payload = reply_fn(self.path, body, dict(self.headers))
            data = json.dumps(payload).encode("utf-8")
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(data)))
            self.end_headers()
            self.wfile.write(data)

        def log_message(self, *args):
            pass

    server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    try:
        yield f"http://127.0.0.1:{server.server_address[1]}"
    finally:
        server.shutdown()
        thread.join()
