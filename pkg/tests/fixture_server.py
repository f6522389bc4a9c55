"""A local HTTP server that plays the market-data aggregator in tests."""
import datetime as dt
import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, urlparse

D0 = dt.date(2017, 1, 1)


def day(i):
    return D0 + dt.timedelta(days=i)


FIXTURE = {
    coin: [(day(i), 100.0 * (k + 1) + i + 0.125, 1e6 * (k + 1) + i) for i in range(10)]
    for k, coin in enumerate(["alpha", "beta"])
}


class FixtureServer:
    """Serves FIXTURE in a configurable JSON shape and records every request."""

    def __init__(self, fail_first=0, status_for=None):
        self.requests = []
        self.fail_first = fail_first
        self.status_for = status_for or {}
        outer = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *a):
                pass

            def do_GET(self):
                url = urlparse(self.path)
                outer.requests.append((url.path, parse_qs(url.query)))
                coin = url.path.strip("/").split("/")[1]
                status = outer.status_for.get(coin, 200)
                if outer.fail_first > 0:
                    outer.fail_first -= 1
                    status = 503
                if status != 200 or coin not in FIXTURE:
                    self.send_response(404 if coin not in FIXTURE else status)
                    self.end_headers()
                    return
                ms = lambda d: int(dt.datetime.combine(d, dt.time(0), tzinfo=dt.timezone.utc).timestamp() * 1000)
                body = {
                    "prices": [[ms(d), p] for d, p, _ in FIXTURE[coin]],
                    "market_caps": [[ms(d), c] for d, _, c in FIXTURE[coin]],
                }
                data = json.dumps(body).encode()
                self.send_response(200)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

        self.httpd = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)

    @property
    def url(self):
        return f"http://127.0.0.1:{self.httpd.server_address[1]}"

    def __enter__(self):
        self.thread.start()
        return self

    def __exit__(self, *exc):
        self.httpd.shutdown()
        self.httpd.server_close()
