"""Simulated machine model: power states, transition delays, DVFS profiles.

Each node is a small named-state machine over four states: ``active``,
``sleeping``, and the transient ``switching_on`` / ``switching_off``. The
platform file may declare transitions either directly between the two stable
states or routed through the transient states; parsing normalizes both
phrasings to one canonical form where

* ``active -> sleeping`` and ``sleeping -> active`` carry the full delay, and
* each transient state's single successor carries the same delay.

A node entering a transient state at ``t`` leaves it exactly at
``t + delay`` and lands in the stable target state.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from fractions import Fraction

from .units import seconds_to_us, us_to_seconds, watts_to_mw, mw_to_watts

ACTIVE = "active"
SLEEPING = "sleeping"
SWITCHING_ON = "switching_on"
SWITCHING_OFF = "switching_off"

STATE_NAMES = (ACTIVE, SLEEPING, SWITCHING_ON, SWITCHING_OFF)
TRANSIENT_STATES = (SWITCHING_ON, SWITCHING_OFF)

# stable target -> transient state passed through on the way there
TRANSIENT_FOR_TARGET = {ACTIVE: SWITCHING_ON, SLEEPING: SWITCHING_OFF}


class PlatformError(ValueError):
    """Raised for any structural problem in a platform document."""


class TransitionRejected(Exception):
    """A request_transition call that is not legal right now.

    Carries a machine-readable ``reason`` so policies can probe legality
    without string matching: one of ``illegal_transition``, ``node_busy``,
    ``already_transitioning``.
    """

    def __init__(self, reason: str, message: str):
        super().__init__(message)
        self.reason = reason


@dataclass(frozen=True)
class DvfsProfile:
    name: str
    power_mw: int
    speed: Fraction  # dimensionless, 1 = nominal


@dataclass(frozen=True)
class PowerStateDef:
    name: str
    power_mw: int | None  # None on the active state means "from DVFS profile"
    speed: Fraction | None  # None on the active state means "from DVFS profile"
    transitions: dict[str, int] = field(default_factory=dict)  # target -> delay us

    def __post_init__(self):
        if self.name != ACTIVE:
            # non-active states never compute and must carry their own power
            assert self.power_mw is not None
            assert self.speed == 0


@dataclass(eq=True)
class Node:
    """One machine: static definition plus engine-mutated runtime state."""

    id: int  # dense internal index, 0..n-1
    external_id: int  # id as written in the platform file
    dvfs_profiles: dict[str, DvfsProfile]
    dvfs_mode: str
    states: dict[str, PowerStateDef]
    initial_state: str = ACTIVE

    # runtime fields, owned by the engine
    current_state: str = ACTIVE
    state_since: int = 0  # us
    running_job: str | None = None
    reserved_for: str | None = None
    idle_since: int = 0  # us; meaningful while active and idle

    @property
    def profile(self) -> DvfsProfile:
        return self.dvfs_profiles[self.dvfs_mode]

    def state_power_mw(self, state_name: str) -> int:
        state = self.states[state_name]
        if state.power_mw is None:
            return self.profile.power_mw
        return state.power_mw

    @property
    def power_mw(self) -> int:
        return self.state_power_mw(self.current_state)

    @property
    def is_idle(self) -> bool:
        """Idle is derived, never stored: active with no job."""
        return self.current_state == ACTIVE and self.running_job is None

    def transition_delay_us(self, target: str) -> int | None:
        return self.states[self.current_state].transitions.get(target)


@dataclass
class Platform:
    nodes: list[Node]

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)

    def instantiate(self, start_time_us: int = 0) -> "Platform":
        """Fresh runtime copy for one simulation; parsed platforms are shared."""
        fresh = []
        for node in self.nodes:
            fresh.append(
                replace(
                    node,
                    current_state=node.initial_state,
                    state_since=start_time_us,
                    running_job=None,
                    reserved_for=None,
                    idle_since=start_time_us,
                )
            )
        return Platform(nodes=fresh)

    def max_active_power_mw(self) -> int:
        return max(node.state_power_mw(ACTIVE) for node in self.nodes)


@dataclass(frozen=True)
class TransitionTicket:
    node_id: int
    completes_at: int  # us
    transient_state: str
    target_state: str


def effective_speed(node: Node) -> Fraction:
    """Compute speed of the node's current state.

    The active state inherits the DVFS profile's speed unless it declares its
    own; every non-active state computes at speed 0.
    """
    if node.current_state != ACTIVE:
        return Fraction(0)
    state = node.states[ACTIVE]
    if state.speed is None:
        return node.profile.speed
    return state.speed


def can_transition(node: Node, target: str) -> bool:
    return (
        node.current_state not in TRANSIENT_STATES
        and node.running_job is None
        and node.transition_delay_us(target) is not None
    )


def request_transition(platform: Platform, node_id: int, target: str, now: int) -> TransitionTicket:
    """Begin a power-state transition on one node.

    The node immediately enters the matching transient state; the returned
    ticket says when the engine must deliver the completion. Rejections are
    typed (TransitionRejected), not crashes, so policies can probe.
    """
    node = platform.nodes[node_id]
    if node.current_state in TRANSIENT_STATES:
        raise TransitionRejected(
            "already_transitioning",
            f"node {node.external_id} is in {node.current_state} and cannot start another transition",
        )
    if node.running_job is not None:
        raise TransitionRejected(
            "node_busy",
            f"node {node.external_id} is running job {node.running_job} and cannot transition",
        )
    delay = node.transition_delay_us(target)
    if delay is None:
        raise TransitionRejected(
            "illegal_transition",
            f"node {node.external_id} declares no transition {node.current_state} -> {target}",
        )
    transient = TRANSIENT_FOR_TARGET[target]
    node.current_state = transient
    node.state_since = now
    return TransitionTicket(
        node_id=node_id,
        completes_at=now + delay,
        transient_state=transient,
        target_state=target,
    )


def complete_transition(platform: Platform, ticket: TransitionTicket, now: int) -> None:
    """Land the node in the ticket's stable target state (engine-mediated)."""
    node = platform.nodes[ticket.node_id]
    if node.current_state != ticket.transient_state:
        raise PlatformError(
            f"node {node.external_id}: transition completion for {ticket.transient_state} "
            f"but node is in {node.current_state}"
        )
    node.current_state = ticket.target_state
    node.state_since = now
    if ticket.target_state == ACTIVE:
        node.idle_since = now


def _fail(node_label, field_name, problem) -> PlatformError:
    return PlatformError(f"node {node_label}: {field_name}: {problem}")


def _parse_speed(raw, node_label, field_name) -> Fraction:
    try:
        speed = Fraction(raw)
    except (TypeError, ValueError):
        raise _fail(node_label, field_name, f"not a number: {raw!r}") from None
    return speed


def _parse_power_mw(raw, node_label, field_name) -> int:
    try:
        mw = watts_to_mw(raw)
    except (TypeError, ValueError):
        raise _fail(node_label, field_name, f"not a number: {raw!r}") from None
    if mw < 0:
        raise _fail(node_label, field_name, f"negative power {raw!r}")
    return mw


def _parse_node(raw: dict, node_label) -> tuple[int, dict, str, dict[str, PowerStateDef], str]:
    try:
        external_id = int(raw["id"])
    except (KeyError, TypeError, ValueError):
        raise _fail(node_label, "id", "missing or not an integer") from None
    if external_id < 0:
        raise _fail(external_id, "id", "must be non-negative")

    profiles: dict[str, DvfsProfile] = {}
    for name, pdoc in (raw.get("dvfs_profiles") or {}).items():
        power = _parse_power_mw(pdoc.get("power"), external_id, f"dvfs_profiles[{name}].power")
        speed = _parse_speed(pdoc.get("speed"), external_id, f"dvfs_profiles[{name}].speed")
        if speed <= 0:
            raise _fail(external_id, f"dvfs_profiles[{name}].speed", f"must be > 0, got {pdoc.get('speed')!r}")
        profiles[name] = DvfsProfile(name=name, power_mw=power, speed=speed)

    dvfs_mode = raw.get("dvfs_mode")
    if dvfs_mode is None and profiles:
        raise _fail(external_id, "dvfs_mode", "missing while dvfs_profiles are declared")
    if dvfs_mode is not None and dvfs_mode not in profiles:
        raise _fail(external_id, "dvfs_mode", f"references missing profile {dvfs_mode!r}")

    raw_states = raw.get("states")
    if not raw_states or ACTIVE not in raw_states:
        raise _fail(external_id, "states", "must declare at least the 'active' state")

    # first pass: per-state power/speed, raw transition delays in us
    raw_transitions: dict[str, dict[str, int]] = {}
    parsed: dict[str, dict] = {}
    for state_name, sdoc in raw_states.items():
        if state_name not in STATE_NAMES:
            raise _fail(external_id, f"states[{state_name}]", f"unknown state name (expected one of {STATE_NAMES})")
        power_raw = sdoc.get("power")
        speed_raw = sdoc.get("speed")
        if state_name == ACTIVE:
            power = None if power_raw is None else _parse_power_mw(power_raw, external_id, "states[active].power")
            if power is None and not profiles:
                raise _fail(external_id, "states[active].power", "null requires a dvfs_profiles entry to inherit from")
            speed = None if speed_raw is None else _parse_speed(speed_raw, external_id, "states[active].speed")
            if speed is None and not profiles:
                raise _fail(external_id, "states[active].speed", "null requires a dvfs_profiles entry to inherit from")
            if speed is not None and speed <= 0:
                raise _fail(external_id, "states[active].speed", f"must be > 0, got {speed_raw!r}")
        else:
            if power_raw is None:
                raise _fail(external_id, f"states[{state_name}].power", "required (non-active states cannot inherit)")
            power = _parse_power_mw(power_raw, external_id, f"states[{state_name}].power")
            speed = Fraction(0)
            if speed_raw not in (None, 0, 0.0):
                raise _fail(external_id, f"states[{state_name}].speed", f"must be 0 or null, got {speed_raw!r}")
        transitions: dict[str, int] = {}
        for target, delay_raw in (sdoc.get("transitions") or {}).items():
            if target not in raw_states:
                raise _fail(
                    external_id,
                    f"states[{state_name}].transitions",
                    f"targets undeclared state {target!r}",
                )
            try:
                delay = seconds_to_us(delay_raw)
            except (TypeError, ValueError):
                raise _fail(external_id, f"states[{state_name}].transitions[{target}]", f"not a number: {delay_raw!r}") from None
            if delay < 0:
                raise _fail(external_id, f"states[{state_name}].transitions[{target}]", f"negative delay {delay_raw!r}")
            transitions[target] = delay
        raw_transitions[state_name] = transitions
        parsed[state_name] = {"power_mw": power, "speed": speed}

    # second pass: normalize to canonical delays between the stable states,
    # folding any transient hop (active -> switching_off -> sleeping) into one edge
    def total_delay(src: str, stable_target: str) -> int | None:
        transient = TRANSIENT_FOR_TARGET[stable_target]
        direct = raw_transitions.get(src, {}).get(stable_target)
        via = raw_transitions.get(src, {}).get(transient)
        if direct is not None and via is not None:
            raise _fail(
                external_id,
                f"states[{src}].transitions",
                f"declares both {stable_target} and {transient}; pick one phrasing",
            )
        if direct is not None:
            return direct
        if via is not None:
            return via + raw_transitions.get(transient, {}).get(stable_target, 0)
        return None

    off_delay = total_delay(ACTIVE, SLEEPING)
    on_delay = total_delay(SLEEPING, ACTIVE) if SLEEPING in raw_states else None
    if off_delay is not None and SWITCHING_OFF not in raw_states:
        raise _fail(external_id, "states", "active -> sleeping transition requires a switching_off state")
    if on_delay is not None and SWITCHING_ON not in raw_states:
        raise _fail(external_id, "states", "sleeping -> active transition requires a switching_on state")

    states: dict[str, PowerStateDef] = {}
    for state_name, meta in parsed.items():
        if state_name == ACTIVE:
            transitions = {} if off_delay is None else {SLEEPING: off_delay}
        elif state_name == SLEEPING:
            transitions = {} if on_delay is None else {ACTIVE: on_delay}
        elif state_name == SWITCHING_ON:
            transitions = {} if on_delay is None else {ACTIVE: on_delay}
        else:
            transitions = {} if off_delay is None else {SLEEPING: off_delay}
        states[state_name] = PowerStateDef(
            name=state_name,
            power_mw=meta["power_mw"],
            speed=meta["speed"],
            transitions=transitions,
        )

    initial_state = raw.get("initial_state", ACTIVE)
    if initial_state not in (ACTIVE, SLEEPING):
        raise _fail(external_id, "initial_state", f"must be 'active' or 'sleeping', got {initial_state!r}")
    if initial_state not in states:
        raise _fail(external_id, "initial_state", f"state {initial_state!r} not declared")

    return external_id, profiles, dvfs_mode, states, initial_state


def parse_platform(data: bytes | str) -> Platform:
    """Parse and validate a platform.json document.

    Node ids in the file may be arbitrary non-negative integers; they are
    normalized to a dense 0..n-1 internal index (ascending file id) with the
    external id preserved for all outputs.
    """
    try:
        doc = json.loads(data)
    except json.JSONDecodeError as exc:
        raise PlatformError(f"malformed JSON: {exc}") from None
    if not isinstance(doc, dict) or not isinstance(doc.get("nodes"), list):
        raise PlatformError("document must be an object with a 'nodes' list")

    entries = []
    seen_ids = set()
    for index, raw in enumerate(doc["nodes"]):
        if not isinstance(raw, dict):
            raise PlatformError(f"node #{index}: must be an object")
        entry = _parse_node(raw, raw.get("id", f"#{index}"))
        if entry[0] in seen_ids:
            raise PlatformError(f"node {entry[0]}: id: duplicate node id")
        seen_ids.add(entry[0])
        entries.append(entry)

    entries.sort(key=lambda e: e[0])
    nodes = []
    for dense_id, (external_id, profiles, dvfs_mode, states, initial_state) in enumerate(entries):
        mode = dvfs_mode if dvfs_mode is not None else ""
        nodes.append(
            Node(
                id=dense_id,
                external_id=external_id,
                dvfs_profiles=profiles,
                dvfs_mode=mode,
                states=states,
                initial_state=initial_state,
                current_state=initial_state,
                idle_since=0,
            )
        )
    return Platform(nodes=nodes)


def serialize_platform(platform: Platform) -> bytes:
    """Emit the canonical platform.json form (round-trips through parse)."""
    out_nodes = []
    for node in platform.nodes:
        states = {}
        for name, state in node.states.items():
            states[name] = {
                "power": None if state.power_mw is None else mw_to_watts(state.power_mw),
                "speed": None if state.speed is None else float(state.speed),
                "transitions": {t: us_to_seconds(d) for t, d in state.transitions.items()},
            }
        entry = {
            "id": node.external_id,
            "dvfs_profiles": {
                name: {"power": mw_to_watts(p.power_mw), "speed": float(p.speed)}
                for name, p in node.dvfs_profiles.items()
            },
            "dvfs_mode": node.dvfs_mode,
            "states": states,
        }
        if node.initial_state != ACTIVE:
            entry["initial_state"] = node.initial_state
        out_nodes.append(entry)
    return json.dumps({"nodes": out_nodes}, indent=2, sort_keys=True).encode()


def uniform_platform(
    num_nodes: int,
    active_power_w: float = 190.0,
    sleep_power_w: float = 9.0,
    switch_on_s: float = 2700.0,
    switch_off_s: float = 1800.0,
    switch_on_power_w: float | None = None,
    switch_off_power_w: float | None = None,
    speed: float = 1.0,
) -> Platform:
    """Build a homogeneous platform programmatically (tests, generator, sweeps).

    Defaults follow a commodity HPC node profile: 190 W active, 9 W asleep,
    45 min to power on at full draw, 30 min to power off at sleep draw.
    """
    doc = {
        "nodes": [
            {
                "id": i,
                "dvfs_profiles": {"base": {"power": active_power_w, "speed": speed}},
                "dvfs_mode": "base",
                "states": {
                    ACTIVE: {"power": None, "speed": None, "transitions": {SLEEPING: switch_off_s}},
                    SLEEPING: {"power": sleep_power_w, "speed": None, "transitions": {ACTIVE: switch_on_s}},
                    SWITCHING_ON: {
                        "power": active_power_w if switch_on_power_w is None else switch_on_power_w,
                        "speed": None,
                    },
                    SWITCHING_OFF: {
                        "power": sleep_power_w if switch_off_power_w is None else switch_off_power_w,
                        "speed": None,
                    },
                },
            }
            for i in range(num_nodes)
        ]
    }
    return parse_platform(json.dumps(doc))
