"""Synthetic fixtures shared by several test modules."""
import json
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from mergeforge.benchrunner.questions import QType, Question

KNOWLEDGE = ["materials", "biology", "application", "gene", "production", "methodology"]
TASKS = ["scenario", "reasoning", "logic"]


def silk_like_bank() -> list[Question]:
    """159 questions: 105 basic (50 MC + 55 TF) and 54 advanced (31 MC + 23 TF)."""
    out = []
    plan = [("basic", 50, 55, KNOWLEDGE), ("advanced", 31, 23, TASKS)]
    n = 0
    for area, n_mc, n_tf, cats in plan:
        for j in range(n_mc + n_tf):
            mc = j < n_mc
            qtype = QType.MC if mc else QType.TF
            key = "ABCD"[j % 4] if mc else "TF"[j % 2]
            text = f"Question {n}?" + (" A) one B) two C) three D) four" if mc else " T/F")
            out.append(Question(f"q{n:03d}", text, qtype, key, cats[j % len(cats)], area))
            n += 1
    return out


def wrong_answer(q: Question) -> str:
    letters = "ABCD" if q.qtype is QType.MC else "TF"
    return letters[(letters.index(q.answer_key) + 1) % len(letters)]


class MockChatServer:
    """Local chat-completions server with scripted behaviour.

    ``script`` maps the request body to ``(status, payload)``; payload may be
    a dict (sent as JSON) or raw bytes.
    """

    def __init__(self, script, delay: float = 0.0):
        self.script = script
        self.delay = delay
        self.requests = []
        self.in_flight = 0
        self.max_in_flight = 0
        self._lock = threading.Lock()
        outer = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):
                pass

            def do_POST(self):
                body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
                with outer._lock:
                    outer.requests.append((self.path, body))
                    outer.in_flight += 1
                    outer.max_in_flight = max(outer.max_in_flight, outer.in_flight)
                try:
                    time.sleep(outer.delay)
                    status, payload = outer.script(body)
                finally:
                    with outer._lock:
                        outer.in_flight -= 1
                raw = payload if isinstance(payload, bytes) else json.dumps(payload).encode()
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(raw)))
                self.end_headers()
                self.wfile.write(raw)

        self.httpd = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.httpd.daemon_threads = True
        self.url = f"http://127.0.0.1:{self.httpd.server_address[1]}"
        self._thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)

    def __enter__(self):
        self._thread.start()
        return self

    def __exit__(self, *exc):
        self.httpd.shutdown()
        self.httpd.server_close()


def reply(content: str):
    return 200, {"choices": [{"message": {"role": "assistant", "content": content}}]}
