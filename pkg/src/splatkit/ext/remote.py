"""HTTP clients for a hosted prompt refiner and image editor.

Both endpoints take JSON. Images and masks travel as base64 PNG::

    POST {refiner_url}/refine  {"prompt": str, "labels": [str]}
        -> {"instructions": [Instruction]} or {"refusal": str}
    POST {editor_url}/edit     {"image_b64", "mask_b64", "instruction", "seed"}
        -> {"image_b64": str}

With a cache directory, responses are stored under the SHA-256 of the request
body and replayed for identical requests.

    pip install splatkit[remote]
"""
from __future__ import annotations

import base64
import hashlib
import io
from typing import TYPE_CHECKING, Any

try:
    import requests
    from requests.adapters import HTTPAdapter
    from urllib3.util.retry import Retry
except ImportError as exc:
    msg = "splatkit.ext.remote requires requests. Install it via 'pip install splatkit[remote]'."
    raise ImportError(msg) from exc

import msgspec
import numpy as np
from loguru import logger
from PIL import Image
from pydantic import BaseModel, ValidationError

from splatkit.editing import EditPlan, EditRequest, EditResponse, Instruction, ServiceOptions
from splatkit.exceptions import ConfigError, PromptRefusedError, RetryableServiceError, ServiceError
from splatkit.storage import to_uint8

if TYPE_CHECKING:
    from collections.abc import Mapping
    from pathlib import Path

    from numpy.typing import ArrayLike, NDArray

RETRY_STATUS = (429, 500, 502, 503, 504)
_BODY_LIMIT = 500


class RefinePayload(BaseModel):  # noqa: D101
    prompt: str
    labels: list[str]


class RefineReply(BaseModel):
    """Either a plan or a refusal."""

    instructions: list[Instruction] = []
    refusal: str | None = None


class EditPayload(BaseModel):  # noqa: D101
    image_b64: str
    mask_b64: str
    instruction: str
    seed: int


class EditReply(BaseModel):  # noqa: D101
    image_b64: str
    status: str = "ok"


def encode_png(image: ArrayLike) -> str:
    """Base64 PNG of a float RGB image or a boolean mask."""
    array = np.asarray(image)
    pixels = (array.astype(np.uint8) * 255) if array.dtype == np.bool_ else to_uint8(array)
    buffer = io.BytesIO()
    Image.fromarray(pixels).save(buffer, format="PNG")
    return base64.b64encode(buffer.getvalue()).decode("ascii")


def decode_png(data: str) -> NDArray[np.float64]:
    """Float RGB image in [0, 1] from base64 PNG."""
    with Image.open(io.BytesIO(base64.b64decode(data))) as image:
        return np.asarray(image.convert("RGB"), dtype=np.float64) / 255.0


def create_session(options: ServiceOptions) -> requests.Session:
    """Session retrying POSTs on connection errors and throttling statuses."""
    retry = Retry(
        total=options.retries,
        backoff_factor=options.backoff,
        status_forcelist=RETRY_STATUS,
        allowed_methods=frozenset({"POST"}),
        raise_on_status=False,
    )
    session = requests.Session()
    adapter = HTTPAdapter(max_retries=retry)
    session.mount("http://", adapter)
    session.mount("https://", adapter)
    if options.token:
        session.headers["Authorization"] = f"Bearer {options.token}"
    return session


class ServiceClient:
    """JSON POSTs with an optional on-disk response cache."""

    def __init__(self, options: ServiceOptions, session: requests.Session | None = None) -> None:  # noqa: D107
        self.options = options
        self.session = session or create_session(options)

    def post(self, url: str, payload: BaseModel) -> dict[str, Any]:
        """POST ``payload`` to ``url`` and return the decoded JSON body."""
        body = payload.model_dump_json()
        cached = self._cache_path(url, body)
        if cached is not None and cached.exists():
            try:
                return msgspec.json.decode(cached.read_bytes())
            except msgspec.DecodeError:
                logger.warning(f"Skipping unreadable cache entry {cached.name}")
        try:
            response = self.session.post(
                url,
                data=body,
                headers={"Content-Type": "application/json"},
                timeout=self.options.timeout,
            )
        except (requests.Timeout, requests.ConnectionError) as exc:
            msg = f"{url} did not answer after {self.options.retries} retries: {exc}"
            raise RetryableServiceError(msg) from exc
        except requests.RequestException as exc:
            msg = f"Request to {url} failed: {exc}"
            raise ServiceError(msg) from exc
        if not response.ok:
            msg = f"{url} answered {response.status_code}"
            raise ServiceError(msg, status=response.status_code, body=response.text[:_BODY_LIMIT])
        try:
            data = response.json()
        except ValueError as exc:
            msg = f"{url} returned a body that is not JSON."
            raise ServiceError(msg, status=response.status_code, body=response.text[:_BODY_LIMIT]) from exc
        if cached is not None:
            cached.parent.mkdir(parents=True, exist_ok=True)
            cached.write_bytes(msgspec.json.encode(data))
        logger.debug(f"POST {url} -> {response.status_code}")
        return data

    def _cache_path(self, url: str, body: str) -> Path | None:
        if self.options.cache_dir is None:
            return None
        digest = hashlib.sha256(f"{url}\n{body}".encode()).hexdigest()
        return self.options.cache_dir / f"{digest}.json"


class RemoteRefiner:
    """Refiner backed by ``POST {refiner_url}/refine``."""

    def __init__(self, options: ServiceOptions, client: ServiceClient | None = None) -> None:  # noqa: D107
        if not options.refiner_url:
            msg = "RemoteRefiner needs a refiner URL (REFINER_URL)."
            raise ConfigError(msg)
        self.url = options.refiner_url.rstrip("/") + "/refine"
        self.client = client or ServiceClient(options)

    def refine(self, prompt: str, labels: Mapping[int, str]) -> EditPlan:  # noqa: D102
        data = self.client.post(self.url, RefinePayload(prompt=prompt, labels=sorted(set(labels.values()))))
        try:
            reply = RefineReply.model_validate(data)
        except ValidationError as exc:
            msg = f"Refiner reply does not match the plan schema: {exc.error_count()} error(s)."
            raise ServiceError(msg, body=msgspec.json.encode(data).decode()[:_BODY_LIMIT]) from exc
        if reply.refusal is not None:
            raise PromptRefusedError(reply.refusal)
        if not reply.instructions:
            msg = "The refiner returned no instructions."
            raise PromptRefusedError(msg)
        return EditPlan(instructions=reply.instructions)


class RemoteEditor:
    """Editor backed by ``POST {editor_url}/edit``."""

    def __init__(self, options: ServiceOptions, client: ServiceClient | None = None) -> None:  # noqa: D107
        if not options.editor_url:
            msg = "RemoteEditor needs an editor URL (EDITOR_URL)."
            raise ConfigError(msg)
        self.url = options.editor_url.rstrip("/") + "/edit"
        self.client = client or ServiceClient(options)

    def edit(self, request: EditRequest) -> EditResponse:  # noqa: D102
        payload = EditPayload(
            image_b64=encode_png(request.image),
            mask_b64=encode_png(np.asarray(request.mask, dtype=np.bool_)),
            instruction=request.instruction,
            seed=request.seed,
        )
        data = self.client.post(self.url, payload)
        try:
            reply = EditReply.model_validate(data)
        except ValidationError as exc:
            msg = "Editor reply has no image_b64."
            raise ServiceError(msg, body=msgspec.json.encode(data).decode()[:_BODY_LIMIT]) from exc
        return EditResponse(decode_png(reply.image_b64), reply.status)


__all__ = [
    "EditPayload",
    "EditReply",
    "RefinePayload",
    "RefineReply",
    "RemoteEditor",
    "RemoteRefiner",
    "ServiceClient",
    "create_session",
    "decode_png",
    "encode_png",
]
