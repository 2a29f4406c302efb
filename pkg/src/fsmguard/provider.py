"""Pluggable Verilog generators: recorded replay, local command, or HTTP."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import shlex
import subprocess
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Union

from fsmguard.planning import SecurityPrompt

log = logging.getLogger(__name__)

REPLAY = "Replay"
COMMAND = "Command"
HTTP = "Http"

REQUIRED_PARAMS = {REPLAY: ("fixtures",), COMMAND: ("command",), HTTP: ("url",)}
# keys consumed by the client itself; everything else is passed through
_HTTP_RESERVED = {"url", "auth_env"}


class ProviderError(RuntimeError):
    """code is one of: config-invalid, timeout, provider-failed, fixture-missing."""

    def __init__(self, code: str, message: str):
        super().__init__(f"{code}: {message}")
        self.code = code


@dataclass(frozen=True)
class ProviderConfig:
    kind: str
    params: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in REQUIRED_PARAMS:
            raise ProviderError("config-invalid", f"unknown provider kind {self.kind!r}")
        missing = [k for k in REQUIRED_PARAMS[self.kind] if not self.params.get(k)]
        if missing:
            raise ProviderError("config-invalid",
                                f"{self.kind} provider needs {', '.join(missing)}")
        for k, v in self.params.items():
            if not isinstance(v, str):
                raise ProviderError("config-invalid", f"param {k!r} must be text")


def load_provider_config(path: Union[str, Path]) -> ProviderConfig:
    """Read a JSON config. Relative paths (replay directory, command cwd) resolve
    against the config file's directory."""
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ProviderError("config-invalid", f"{path}: {exc}") from None
    if not isinstance(data, dict) or not isinstance(data.get("params", {}), dict):
        raise ProviderError("config-invalid", f"{path}: expected an object with kind and params")
    params = dict(data.get("params", {}))
    if data.get("kind") == REPLAY and isinstance(params.get("fixtures"), str):
        params["fixtures"] = str(path.parent / params["fixtures"])
    if data.get("kind") == COMMAND:
        params["cwd"] = str(path.parent / params.get("cwd", "."))
    return ProviderConfig(data.get("kind"), params)


def prompt_text(prompt: Union[SecurityPrompt, str]) -> str:
    return prompt.render() if isinstance(prompt, SecurityPrompt) else prompt


def prompt_hash(prompt: Union[SecurityPrompt, str]) -> str:
    return hashlib.sha256(prompt_text(prompt).encode("utf-8")).hexdigest()


def _replay(text: str, cfg: ProviderConfig, timeout: float) -> str:
    path = Path(cfg.params["fixtures"]) / f"{prompt_hash(text)}.v"
    try:
        return path.read_bytes().decode("utf-8")
    except FileNotFoundError:
        raise ProviderError("fixture-missing", f"no recorded response at {path}") from None


def _command(text: str, cfg: ProviderConfig, timeout: float) -> str:
    argv = shlex.split(cfg.params["command"])
    try:
        proc = subprocess.run(argv, input=text.encode("utf-8"), capture_output=True,
                              timeout=timeout, cwd=cfg.params.get("cwd"))
    except subprocess.TimeoutExpired:
        raise ProviderError("timeout", f"{argv[0]} exceeded {timeout}s") from None
    except OSError as exc:
        raise ProviderError("provider-failed", str(exc)) from None
    if proc.returncode != 0:
        err = proc.stderr.decode("utf-8", "replace").strip()
        raise ProviderError("provider-failed", f"{argv[0]} exited {proc.returncode}: {err}")
    return proc.stdout.decode("utf-8")


def _http(text: str, cfg: ProviderConfig, timeout: float) -> str:
    payload = {k: v for k, v in cfg.params.items() if k not in _HTTP_RESERVED}
    payload["prompt"] = text
    headers = {"Content-Type": "application/json"}
    env = cfg.params.get("auth_env")
    if env:
        token = os.environ.get(env)
        if not token:
            raise ProviderError("config-invalid", f"environment variable {env} is not set")
        headers["Authorization"] = f"Bearer {token}"
    req = urllib.request.Request(cfg.params["url"], data=json.dumps(payload).encode("utf-8"),
                                 headers=headers, method="POST")
    try:
        with urllib.request.urlopen(req, timeout=timeout) as resp:
            body = json.loads(resp.read().decode("utf-8"))
    except TimeoutError:
        raise ProviderError("timeout", f"no response within {timeout}s") from None
    except urllib.error.HTTPError as exc:
        raise ProviderError("provider-failed", f"HTTP {exc.code}") from None
    except urllib.error.URLError as exc:
        if isinstance(exc.reason, TimeoutError):
            raise ProviderError("timeout", f"no response within {timeout}s") from None
        raise ProviderError("provider-failed", str(exc.reason)) from None
    except json.JSONDecodeError:
        raise ProviderError("provider-failed", "response is not JSON") from None
    if not isinstance(body, dict) or not isinstance(body.get("text"), str):
        raise ProviderError("provider-failed", "response has no text field")
    return body["text"]


_BACKENDS = {REPLAY: _replay, COMMAND: _command, HTTP: _http}


def generate(
    prompt: Union[SecurityPrompt, str],
    cfg: ProviderConfig,
    timeout: float = 60.0,
    retries: int = 0,
) -> str:
    """Send the rendered prompt to the provider and return its text verbatim.

    Failures raise :class:`ProviderError`. With ``retries`` > 0 each failed
    attempt is logged before the next one.
    """
    text = prompt_text(prompt)
    for attempt in range(retries + 1):
        try:
            return _BACKENDS[cfg.kind](text, cfg, timeout)
        except ProviderError as exc:
            if attempt == retries or exc.code in ("fixture-missing", "config-invalid"):
                raise
            log.warning("provider attempt %d/%d failed: %s", attempt + 1, retries + 1, exc)
    raise AssertionError("unreachable")  # pragma: no cover
