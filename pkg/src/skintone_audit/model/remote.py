"""Black-box HTTP scoring client.

Wire protocol: ``POST`` a JSON body ``{"image": <base64 PNG>}``; the server
answers ``{"score": <number in [0, 1]>}`` or ``{"error": "no_face"}``.
"""

from __future__ import annotations

import base64
import io
import json
import logging
import os
import threading
import time
import urllib.error
import urllib.request
from typing import Callable

import numpy as np
from PIL import Image

from ..errors import MalformedReply, NoFace, TransportError
from ..imaging import RasterImage
from .classifier import GenderScore

log = logging.getLogger(__name__)

ENDPOINT_ENV = "SKINTONE_AUDIT_ENDPOINT"
TRANSIENT_STATUS = frozenset({408, 425, 429, 500, 502, 503, 504})
NO_FACE = "no_face"


def encode_image(img: RasterImage) -> str:
    buf = io.BytesIO()
    Image.fromarray(np.asarray(img.pixels)).save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def decode_image(payload: str) -> RasterImage:
    with Image.open(io.BytesIO(base64.b64decode(payload))) as im:
        return RasterImage(np.asarray(im.convert("RGB")))


def parse_reply(body: bytes) -> GenderScore:
    try:
        reply = json.loads(body)
    except (ValueError, UnicodeDecodeError) as exc:
        raise MalformedReply(f"reply is not JSON: {exc}") from None
    if not isinstance(reply, dict):
        raise MalformedReply("reply must be a JSON object")
    if reply.get("error") == NO_FACE:
        raise NoFace("no face detected")
    if "error" in reply:
        raise MalformedReply(f"server error: {reply['error']!r}")
    s = reply.get("score")
    if isinstance(s, bool) or not isinstance(s, (int, float)):
        raise MalformedReply(f"score missing or not a number: {s!r}")
    s = float(s)
    if not 0.0 <= s <= 1.0:
        raise MalformedReply(f"score {s} outside [0, 1]")
    return GenderScore(s)


class RemoteClassifier:
    """Scores images through an HTTP endpoint with bounded retries.

    At most ``max_in_flight`` requests run at once across threads sharing
    this client.
    """

    def __init__(self, endpoint: str | None = None, *, timeout: float = 30.0,
                 max_retries: int = 3, base_delay: float = 0.5, max_delay: float = 8.0,
                 max_in_flight: int = 4, sleep: Callable[[float], None] = time.sleep):
        endpoint = endpoint or os.environ.get(ENDPOINT_ENV)
        if not endpoint:
            raise ValueError(f"no endpoint given and {ENDPOINT_ENV} is unset")
        self.endpoint = endpoint
        self.timeout = timeout
        self.max_retries = max_retries
        self.base_delay = base_delay
        self.max_delay = max_delay
        self._sleep = sleep
        self._slots = threading.BoundedSemaphore(max_in_flight)

    def _backoff(self, attempt: int) -> float:
        return min(self.max_delay, self.base_delay * 2 ** attempt)

    def _post(self, body: bytes) -> bytes:
        req = urllib.request.Request(
            self.endpoint, data=body, headers={"Content-Type": "application/json"}, method="POST"
        )
        with self._slots:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                return resp.read()

    def score_image(self, img: RasterImage) -> GenderScore:
        body = json.dumps({"image": encode_image(img)}).encode()
        last = None
        for attempt in range(self.max_retries + 1):
            try:
                return parse_reply(self._post(body))
            except urllib.error.HTTPError as exc:
                payload = exc.read()
                if exc.code not in TRANSIENT_STATUS:
                    # A 4xx carrying a protocol reply (e.g. no_face) is still a reply.
                    if payload:
                        try:
                            return parse_reply(payload)
                        except MalformedReply:
                            pass
                    raise TransportError(f"HTTP {exc.code} from {self.endpoint}") from None
                last = f"HTTP {exc.code}"
            except (urllib.error.URLError, TimeoutError, ConnectionError) as exc:
                last = str(getattr(exc, "reason", exc))
            if attempt < self.max_retries:
                delay = self._backoff(attempt)
                log.warning("transient failure (%s), retry %d in %.2fs", last, attempt + 1, delay)
                self._sleep(delay)
        raise TransportError(f"{self.endpoint}: giving up after {self.max_retries + 1} attempts ({last})")

    def score(self, img: RasterImage) -> float:
        return self.score_image(img).s


def remote_score(endpoint: str, img: RasterImage, **kwargs) -> GenderScore:
    return RemoteClassifier(endpoint, **kwargs).score_image(img)
