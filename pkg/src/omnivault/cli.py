"""``omnivault`` command-line tool.

Storage root and state directory come from ``--root``/``--state`` or the
``OMNIVAULT_ROOT``/``OMNIVAULT_STATE`` environment variables. Private
material (device key, record MAC key, peer contexts, received plaintext)
is kept under the state directory only; the storage root holds nothing
but ciphertext, envelopes, the domain descriptor and protocol messages.
"""

from __future__ import annotations

import json
import os
import sys
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, TypeVar

import click

from . import adversary_harness as ah
from . import auth_pake as srp
from . import auth_single as s1
from . import crypto_core as cc
from . import domain as dm
from . import oob
from . import sharing as sh
from .errors import (
    ClaimViolated,
    DomainExists,
    OmniError,
    PathMismatch,
    TimedOut,
    UnexpectedMessage,
    UnknownPeer,
)
from .key_hierarchy import Hierarchy, HierarchyPath
from .storage import LocalDirStorage, PublicLink, StorageChannel

T = TypeVar("T")

DEVICE_FILE = "device.json"
KEY_FILE = "device_key.pem"
AUTH_KEY_FILE = "auth_key"
PEERS_DIR = "peers"
INBOX_DIR = "inbox"
PEERING_FILE = "peering.json"
COUNTDOWN_STEP = 5.0

HINTS = {PathMismatch: "directory was moved or renamed; its envelope must be re-wrapped"}


# -- config and local state ---------------------------------------------------------

@dataclass
class CliConfig:
    storage_root: Path | None
    state_dir: Path

    def store(self) -> LocalDirStorage:
        if self.storage_root is None:
            raise click.UsageError("no storage root; pass --root or set OMNIVAULT_ROOT")
        return LocalDirStorage(self.storage_root)

    def path(self, *parts: str) -> Path:
        return self.state_dir.joinpath(*parts)

    def write_private(self, name: str, data: bytes) -> None:
        target = self.path(name)
        target.parent.mkdir(parents=True, exist_ok=True, mode=0o700)
        fd = os.open(target, os.O_WRONLY | os.O_CREAT | os.O_TRUNC, 0o600)
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)

    def has_device(self) -> bool:
        return self.path(DEVICE_FILE).exists()

    def save_device(self, meta: dm.DeviceMeta, keypair: cc.DeviceKeypair, auth_key: bytes) -> None:
        info = {
            "name": meta.name,
            "device_id": meta.device_id.hex(),
            "capabilities": sorted(c.value for c in meta.capabilities),
        }
        self.write_private(KEY_FILE, keypair.private_pem())
        self.write_private(AUTH_KEY_FILE, auth_key.hex().encode("ascii"))
        self.write_private(DEVICE_FILE, json.dumps(info, indent=2).encode("utf-8"))

    def load_device(self) -> tuple[dm.DeviceMeta, cc.DeviceKeypair, bytes]:
        if not self.has_device():
            raise click.UsageError(f"no device state in {self.state_dir}; run init or join first")
        info = json.loads(self.path(DEVICE_FILE).read_text("utf-8"))
        meta = dm.DeviceMeta(info["name"], bytes.fromhex(info["device_id"]), dm.Capability.parse_set(info["capabilities"]))
        keypair = cc.DeviceKeypair.from_pem(self.path(KEY_FILE).read_bytes())
        auth_key = bytes.fromhex(self.path(AUTH_KEY_FILE).read_text("ascii"))
        return meta, keypair, auth_key

    def root_key(self, store: StorageChannel) -> bytes:
        meta, keypair, auth_key = self.load_device()
        return dm.load_root_key(dm.load_descriptor(store), meta.device_id, keypair, auth_key)

    def hierarchy(self) -> Hierarchy:
        store = self.store()
        return Hierarchy(store, self.root_key(store))

    def peers(self) -> list[sh.PeerContext]:
        folder = self.path(PEERS_DIR)
        if not folder.is_dir():
            return []
        return [sh.PeerContext.from_json(p.read_text("utf-8")) for p in sorted(folder.glob("*.json"))]

    def peer(self, prefix: str) -> sh.PeerContext:
        matches = [c for c in self.peers() if c.peer_id.hex().startswith(prefix.lower())]
        if len(matches) != 1:
            raise UnknownPeer(f"{len(matches)} peers match {prefix!r}")
        return matches[0]


def _wait(what: str, timeout: float, fetch: Callable[[float], T]) -> T:
    """Poll ``fetch`` in short slices, reporting the time left on stderr."""
    deadline = time.monotonic() + timeout
    while True:
        remaining = deadline - time.monotonic()
        click.echo(f"waiting for {what}: {max(remaining, 0):.0f}s left", err=True)
        try:
            return fetch(max(min(remaining, COUNTDOWN_STEP), 0))
        except TimedOut:
            if time.monotonic() >= deadline:
                raise TimedOut(f"no {what} within {timeout:g}s") from None


def _caps(text: str) -> frozenset[dm.Capability]:
    try:
        return dm.Capability.parse_set(text)
    except ValueError as exc:
        raise click.BadParameter(str(exc)) from None


def _find_device(desc: dm.DomainDescriptor, ref: str) -> dm.DeviceRecord:
    for rec in desc.records:
        if rec.device_id.hex() == ref.lower():
            return rec
    return desc.find_by_name(ref)


class OmniGroup(click.Group):
    """Maps typed errors to their stable exit codes with a one-line diagnostic."""

    def invoke(self, ctx: click.Context):
        try:
            return super().invoke(ctx)
        except OmniError as exc:
            hint = next((h for cls, h in HINTS.items() if isinstance(exc, cls)), None)
            click.echo(f"error: {type(exc).__name__}: {exc}", err=True)
            if hint:
                click.echo(f"hint: {hint}", err=True)
            ctx.exit(exc.exit_code)


@click.group(cls=OmniGroup)
@click.option("--root", envvar="OMNIVAULT_ROOT", type=click.Path(file_okay=False, path_type=Path), help="Storage root.")
@click.option(
    "--state",
    envvar="OMNIVAULT_STATE",
    type=click.Path(file_okay=False, path_type=Path),
    default=Path.home() / ".omnivault",
    show_default=True,
    help="Private per-device state directory.",
)
@click.pass_context
def cli(ctx: click.Context, root: Path | None, state: Path) -> None:
    """Client-side encrypted storage with out-of-band device authorization."""
    ctx.obj = CliConfig(root, state)


pass_config = click.make_pass_decorator(CliConfig)


# -- domain lifecycle ------------------------------------------------------------------

@cli.command()
@click.option("--name", required=True)
@click.option("--caps", default="DISPLAY,CAMERA,KEYBOARD", show_default=True, help="Comma-separated capabilities.")
@pass_config
def init(cfg: CliConfig, name: str, caps: str) -> None:
    """Create a new domain with this device as its first member."""
    if cfg.has_device():
        raise DomainExists(f"state directory {cfg.state_dir} already holds a device")
    meta = dm.DeviceMeta.new(name, _caps(caps))
    desc, _, auth_key, keypair = dm.init_domain(meta, cfg.store())
    cfg.save_device(meta, keypair, auth_key)
    click.echo(f"domain {desc.domain_id.hex()} created; device {name} ({meta.device_id.hex()})")


@cli.command()
@pass_config
def status(cfg: CliConfig) -> None:
    """Show this device and the domain's members."""
    meta, _, _ = cfg.load_device()
    click.echo(f"device: {meta.name} ({meta.device_id.hex()})")
    desc = dm.load_descriptor(cfg.store())
    member = any(r.device_id == meta.device_id for r in desc.records)
    click.echo(f"domain: {desc.domain_id.hex()}")
    click.echo(f"member: {'yes' if member else 'no'}")
    for rec in desc.records:
        caps = ",".join(sorted(c.value for c in rec.capabilities))
        click.echo(f"  {rec.name}  {rec.device_id.hex()}  {caps}")


# -- files -----------------------------------------------------------------------------

@cli.command()
@click.argument("src", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.argument("dst")
@pass_config
def put(cfg: CliConfig, src: Path, dst: str) -> None:
    """Encrypt local file SRC into the domain at DST."""
    cfg.hierarchy().write_file(dst, src.read_bytes(), create_dirs=True)


@cli.command()
@click.argument("src")
@click.argument("dst", type=click.Path(dir_okay=False, path_type=Path))
@pass_config
def get(cfg: CliConfig, src: str, dst: Path) -> None:
    """Decrypt domain file SRC to local file DST."""
    dst.write_bytes(cfg.hierarchy().read_file(src))


@cli.command("ls")
@click.argument("directory", default="")
@pass_config
def ls_cmd(cfg: CliConfig, directory: str) -> None:
    """List a domain directory."""
    for entry in cfg.hierarchy().listdir(directory):
        click.echo(entry)


# -- device authorization ----------------------------------------------------------------

@cli.command()
@click.option("--name", required=True)
@click.option("--caps", default="DISPLAY", show_default=True)
@click.option("--authorizer", required=True, help="Name or device id of an existing member.")
@click.option("--timeout", default=300.0, show_default=True)
@pass_config
def join(cfg: CliConfig, name: str, caps: str, authorizer: str, timeout: float) -> None:
    """Join an existing domain with the help of an authorizing device."""
    store = cfg.store()
    desc = dm.load_descriptor(store)
    if cfg.has_device():
        meta, _, _ = cfg.load_device()
        if any(r.device_id == meta.device_id for r in desc.records):
            raise DomainExists(f"{meta.name} is already a member")
    auth_rec = _find_device(desc, authorizer)
    meta = dm.DeviceMeta.new(name, _caps(caps))
    choice = dm.select_protocol(meta.capabilities, auth_rec.capabilities)
    keypair, auth_key = cc.asym_keygen(), cc.generate_key()

    if choice.kind is dm.ProtocolKind.SINGLE_ROUND_TRIP:
        machine = s1.SingleNewDevice(keypair, auth_rec.device_id)
        payload, msg = machine.start()
        store.send_message(msg)
        click.echo(f"Enter this code on {auth_rec.name} ({choice.oob.value} channel):")
        click.echo(f"code: {oob.to_base32(payload.encode())}")
        rk = machine.finish(_wait("authorizer", timeout, lambda t: store.await_message(machine.reply_uuid, t)))
    else:
        machine = srp.SrpNewDevice(auth_rec.device_id)
        msg, passcode = machine.round1()
        store.send_message(msg)
        click.echo(f"Type this passcode on {auth_rec.name}:")
        click.echo(f"passcode: {passcode}")
        beta = _wait("authorizer", timeout, lambda t: store.await_message(machine.reply_uuid, t))
        store.send_message(machine.round2(beta))
        rk = machine.finish(_wait("root key", timeout, lambda t: store.await_message(machine.reply_uuid, t)))

    desc = dm.register_self(dm.load_descriptor(store), rk, meta, keypair, auth_key)
    dm.save_descriptor(store, desc)
    cfg.save_device(meta, keypair, auth_key)
    click.echo(f"joined domain {desc.domain_id.hex()} as {name} ({meta.device_id.hex()})")


@cli.command()
@click.argument("code", required=False)
@click.option("--timeout", default=300.0, show_default=True)
@pass_config
def authorize(cfg: CliConfig, code: str | None, timeout: float) -> None:
    """Answer one pending join request addressed to this device."""
    store = cfg.store()
    meta, _, _ = cfg.load_device()
    rk = cfg.root_key(store)
    first = _wait("join request", timeout, lambda t: store.await_addressed(meta.device_id, t))
    if first.msg_type == s1.MSG_PK:
        code = code or click.prompt("code shown on the new device")
        machine = s1.SingleAuthorizer(rk)
        machine.accept_oob(oob.from_base32(code))
        store.send_message(machine.respond(first))
    elif first.msg_type == srp.MSG_ALPHA:
        code = code or click.prompt("passcode shown on the new device")
        machine = srp.SrpAuthorizer(rk)
        store.send_message(machine.round1(first, code.strip()))
        m1 = _wait("new device", timeout, lambda t: store.await_message(machine.reply_uuid, t))
        store.send_message(machine.round2(m1))
    else:
        raise UnexpectedMessage(f"not a join request: {first.msg_type}")
    click.echo("authorized")


# -- peering and sharing -----------------------------------------------------------------

@cli.group()
def peer() -> None:
    """Pair with another user's domain: hello, accept, then link on both sides."""


def _device_id(cfg: CliConfig) -> bytes:
    return cfg.load_device()[0].device_id


@peer.command("hello")
@pass_config
def peer_hello(cfg: CliConfig) -> None:
    """Start a peering and print the hello to send to the other user."""
    session = sh.PeeringSession(cfg.store(), _device_id(cfg))
    cfg.write_private(PEERING_FILE, json.dumps({"key": session.private_pem().decode("ascii")}).encode("utf-8"))
    click.echo(session.hello().decode("utf-8"))


@peer.command("accept")
@click.argument("hello")
@pass_config
def peer_accept(cfg: CliConfig, hello: str) -> None:
    """Take the other user's hello and print our control link for them."""
    path = cfg.path(PEERING_FILE)
    if not path.exists():
        raise click.UsageError("run 'peer hello' first")
    pending = json.loads(path.read_text("utf-8"))
    session = sh.PeeringSession(cfg.store(), _device_id(cfg), pending["key"].encode("ascii"))
    session.receive_hello(hello.encode("utf-8"))
    pending = {"peer_key": session.peer_key.hex(), "peer_id": session.peer_id.hex(), "own_link": session.own_link.to_text()}
    cfg.write_private(PEERING_FILE, json.dumps(pending).encode("utf-8"))
    click.echo(session.link_message().decode("utf-8"))


@peer.command("link")
@click.argument("link")
@pass_config
def peer_link(cfg: CliConfig, link: str) -> None:
    """Take the other user's control link and finish the peering."""
    path = cfg.path(PEERING_FILE)
    pending = json.loads(path.read_text("utf-8")) if path.exists() else {}
    if "peer_key" not in pending:
        raise click.UsageError("run 'peer accept' first")
    ctx = sh.PeerContext(
        bytes.fromhex(pending["peer_key"]),
        _device_id(cfg),
        bytes.fromhex(pending["peer_id"]),
        PublicLink.from_text(pending["own_link"]),
        PublicLink.from_text(link.strip()),
    )
    cfg.write_private(f"{PEERS_DIR}/{ctx.peer_id.hex()}.json", ctx.to_json().encode("utf-8"))
    path.unlink()
    click.echo(f"peered with {ctx.peer_id.hex()}")


@peer.command("list")
@pass_config
def peer_list(cfg: CliConfig) -> None:
    for ctx in cfg.peers():
        click.echo(ctx.peer_id.hex())


@cli.command()
@click.argument("path")
@click.option("--peer", "peer_ref", required=True, help="Peer id or unique prefix.")
@pass_config
def share(cfg: CliConfig, path: str, peer_ref: str) -> None:
    """Share domain file PATH read-only with a peer."""
    ctx = cfg.peer(peer_ref)
    click.echo(sh.share_file(ctx, path, cfg.hierarchy()).hex())


@cli.command()
@click.option("--peer", "peer_ref", default=None, help="Only this peer.")
@pass_config
def receive(cfg: CliConfig, peer_ref: str | None) -> None:
    """Fetch new shares into the local inbox and acknowledge them."""
    store = cfg.store()
    contexts = [cfg.peer(peer_ref)] if peer_ref else cfg.peers()
    for ctx in contexts:
        peer_store = LocalDirStorage(ctx.peer_control_link.location)
        for share_id, plaintext in sh.scan_and_receive(ctx, store, peer_store):
            cfg.write_private(f"{INBOX_DIR}/{share_id.hex()}", plaintext)
            click.echo(f"{share_id.hex()}  {len(plaintext)} bytes  from {ctx.peer_id.hex()}")


@cli.command("store")
@click.argument("share_id")
@click.argument("dst")
@pass_config
def store_cmd(cfg: CliConfig, share_id: str, dst: str) -> None:
    """Import received share SHARE_ID into the domain at DST."""
    source = cfg.path(INBOX_DIR, share_id.lower())
    if not source.exists():
        raise click.BadParameter(f"no received share {share_id}", param_hint="SHARE_ID")
    tree = cfg.hierarchy()
    parent = HierarchyPath.parse(dst).parent
    if not parent.is_root:
        tree.mkdir(parent)
    sh.store_received(tree, dst, source.read_bytes())
    source.unlink()


# -- adversary simulation ----------------------------------------------------------------

@cli.command()
@click.option("--protocol", type=click.Choice(["single", "pake", "both"]), default="both", show_default=True)
@click.option("--strategy", type=click.Choice([s.value for s in ah.Strategy]), default="passive", show_default=True)
@click.option("--seeds", default=10, show_default=True, help="Number of seeds.")
@click.option("--first-seed", default=0, show_default=True)
@click.option("--variant", type=click.Choice(ah.VARIANTS), default=None, help="Run a deliberately weakened variant.")
@click.option("--json", "as_json", is_flag=True, help="Emit JSON instead of a table.")
def attack(protocol: str, strategy: str, seeds: int, first_seed: int, variant: str | None, as_json: bool) -> None:
    """Run authorization under a simulated network adversary."""
    protocols = list(ah.Protocol) if protocol == "both" else [ah.Protocol(protocol)]
    rows = [
        ah.run_authorization(p, strategy, seed, variant=variant).to_dict()
        for p in protocols
        for seed in range(first_seed, first_seed + seeds)
    ]
    if as_json:
        click.echo(json.dumps(rows, indent=2))
    else:
        click.echo(f"{'protocol':8} {'seed':>5}  {'A':10} {'B':10} {'error':16} secrecy agreement")
        for r in rows:
            phases = r["phases"]["main"]
            error = r["errors"]["main"] or "-"
            click.echo(
                f"{r['protocol']:8} {r['seed']:>5}  {phases['A']:10} {phases['B']:10} {error:16} "
                f"{str(r['secrecy']).lower():7} {str(r['agreement']).lower()}"
            )
    bad = sum(not (r["secrecy"] and r["agreement"]) for r in rows)
    if bad:
        raise ClaimViolated(f"{bad} of {len(rows)} runs broke secrecy or agreement")


def main() -> None:
    cli(prog_name="omnivault")


if __name__ == "__main__":
    sys.exit(main())
