"""HTTP front end for the annotation service (stdlib http.server based)."""

import os
import re
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from . import lineio
from .collect import AnnotationService, RaterProfile
from .errors import DomainError, ParseError, StyleprefError, ValidationError

_SESSION_NEXT = re.compile(r"^/sessions/([^/]+)/next$")
_SESSION_JUDGMENT = re.compile(r"^/sessions/([^/]+)/judgments$")
_SESSION_DESCRIPTION = re.compile(r"^/sessions/([^/]+)/description$")
_AUDIO = re.compile(r"^/audio/([^/]+)$")


def _make_handler(service: AnnotationService, static_dir=None):
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def log_message(self, fmt, *args):  # quiet by default
            pass

        def _send(self, status: int, body: bytes, content_type="application/json"):
            self.send_response(status)
            self.send_header("Content-Type", content_type)
            self.send_header("Content-Length", str(len(body)))
            self.send_header("Access-Control-Allow-Origin", "*")
            self.send_header("Access-Control-Allow-Headers", "Content-Type")
            self.send_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS")
            self.end_headers()
            self.wfile.write(body)

        def _send_obj(self, status: int, obj: dict):
            self._send(status, (lineio.dumps(obj) + "\n").encode("utf-8"))

        def _send_error(self, exc: Exception):
            if isinstance(exc, (ParseError, ValidationError)):
                status = 400
            elif isinstance(exc, DomainError):
                status = 409
            else:
                status = 500
            self._send_obj(status, {"error": str(exc)})

        def _read_body(self) -> dict:
            length = int(self.headers.get("Content-Length", "0"))
            raw = self.rfile.read(length).decode("utf-8").strip()
            if not raw:
                raise ParseError("empty request body")
            return lineio.parse_line(raw.splitlines()[0], 1)

        def do_OPTIONS(self):
            self._send(204, b"")

        def do_GET(self):
            try:
                m = _SESSION_NEXT.match(self.path)
                if m:
                    self._send_obj(200, service.next_trial(m.group(1)))
                    return
                m = _AUDIO.match(self.path)
                if m:
                    utt = m.group(1)
                    path = service.audio_paths.get(utt)
                    if path is None or not os.path.exists(path):
                        self._send_obj(404, {"error": f"no audio for utterance {utt!r}"})
                        return
                    with open(path, "rb") as fh:
                        self._send(200, fh.read(), content_type="audio/wav")
                    return
                if self.path == "/export":
                    judgments, _ = service.export_judgments()
                    body = "".join(lineio.dumps(j.to_dict()) + "\n" for j in judgments)
                    self._send(200, body.encode("utf-8"), content_type="text/plain; charset=utf-8")
                    return
                if self.path == "/export/summary":
                    _, summary = service.export_judgments()
                    self._send_obj(200, summary)
                    return
                if static_dir is not None:
                    self._serve_static()
                    return
                self._send_obj(404, {"error": f"no route for {self.path}"})
            except StyleprefError as exc:
                self._send_error(exc)

        def _serve_static(self):
            rel = self.path.lstrip("/") or "index.html"
            path = os.path.normpath(os.path.join(static_dir, rel))
            if not path.startswith(os.path.abspath(static_dir)) or not os.path.isfile(path):
                self._send_obj(404, {"error": f"no route for {self.path}"})
                return
            ctype = {
                ".html": "text/html; charset=utf-8",
                ".js": "text/javascript; charset=utf-8",
                ".css": "text/css; charset=utf-8",
            }.get(os.path.splitext(path)[1], "application/octet-stream")
            with open(path, "rb") as fh:
                self._send(200, fh.read(), content_type=ctype)

        def do_POST(self):
            try:
                if self.path == "/sessions":
                    profile = RaterProfile.from_dict(self._read_body())
                    sess = service.create_session(profile)
                    self._send_obj(
                        200,
                        {
                            "session_id": sess.session_id,
                            "rater_id": sess.rater_id,
                            "session_size": len(sess.trial_list),
                        },
                    )
                    return
                m = _SESSION_JUDGMENT.match(self.path)
                if m:
                    body = self._read_body()
                    if "pair_id" not in body or "side_chosen" not in body:
                        raise ParseError("judgment body needs pair_id and side_chosen")
                    ack = service.submit_judgment(m.group(1), str(body["pair_id"]), str(body["side_chosen"]))
                    self._send_obj(200, ack)
                    return
                m = _SESSION_DESCRIPTION.match(self.path)
                if m:
                    body = self._read_body()
                    ack = service.submit_description(m.group(1), str(body.get("text", "")))
                    self._send_obj(200, ack)
                    return
                self._send_obj(404, {"error": f"no route for {self.path}"})
            except StyleprefError as exc:
                self._send_error(exc)

    return Handler


class CollectServer:
    """Owns an HTTP server bound to an AnnotationService."""

    def __init__(self, service: AnnotationService, host="127.0.0.1", port=0, static_dir=None):
        self.service = service
        self.httpd = ThreadingHTTPServer((host, port), _make_handler(service, static_dir))
        self._thread = None

    @property
    def address(self):
        return self.httpd.server_address

    def start_background(self):
        self._thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)
        self._thread.start()
        return self

    def serve_forever(self):
        self.httpd.serve_forever()

    def stop(self):
        self.httpd.shutdown()
        self.httpd.server_close()
        if self._thread is not None:
            self._thread.join()
        self.service.close()
