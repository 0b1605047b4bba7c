"""Event-driven function-block runtime.

Blocks expose event ports and data ports; data travels only alongside
events.  When a block emits an event output, the values of the data outputs
associated with that event are snapshotted immediately and carried inside
the queued delivery, so later writes by the source never leak into a
delivery already in flight.

Each resource owns one FIFO event queue and is driven single-threaded;
management commands (create/delete of instances and connections) are
serialized between dispatch steps, never applied mid-delivery.
"""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

from .errors import (
    DuplicateInstance,
    DuplicateType,
    IllegalConnection,
    StepBudgetExceeded,
    UnknownConnection,
    UnknownInstance,
    UnknownPort,
    UnknownType,
)

DEFAULT_STEP_BUDGET = 100_000


class ValueKind(enum.Enum):
    TEXT = "text"
    INTEGER = "integer"
    BOOLEAN = "boolean"
    BLOB = "blob"

    def zero(self) -> Any:
        return {ValueKind.TEXT: "", ValueKind.INTEGER: 0,
                ValueKind.BOOLEAN: False, ValueKind.BLOB: b""}[self]


@dataclass(frozen=True)
class EventPort:
    name: str
    data: tuple[str, ...] = ()  # associated data port names


@dataclass(frozen=True)
class DataPort:
    name: str
    kind: ValueKind = ValueKind.TEXT
    default: Any = None

    def initial(self) -> Any:
        return self.kind.zero() if self.default is None else self.default


@dataclass(frozen=True)
class Basic:
    """Behavior is an opaque callback keyed by the triggering event input."""

    handler: Callable[["FBInstance", str], None]


@dataclass(frozen=True)
class ServiceInterface:
    """Behavior lives on the instance's binding object (on_event method)."""


@dataclass(frozen=True)
class BoundaryLink:
    """One composite boundary wire; `SELF` marks the composite's own port."""

    kind: "ConnKind"
    source: tuple[str, str]  # (child id or SELF, port)
    target: tuple[str, str]


SELF = "SELF"


@dataclass(frozen=True)
class Composite:
    """An internal block network behind the composite's interface."""

    children: tuple[tuple[str, str], ...]  # (child id, type name)
    links: tuple[BoundaryLink, ...]


class ConnKind(enum.Enum):
    EVENT = "event"
    DATA = "data"


@dataclass(frozen=True)
class Connection:
    kind: ConnKind
    source: tuple[str, str]  # (instance id, output port)
    target: tuple[str, str]  # (instance id, input port)


@dataclass
class FBTypeDef:
    """A function-block interface plus its execution kind."""

    name: str
    event_inputs: tuple[EventPort, ...] = ()
    event_outputs: tuple[EventPort, ...] = ()
    data_inputs: tuple[DataPort, ...] = ()
    data_outputs: tuple[DataPort, ...] = ()
    kind: Basic | Composite | ServiceInterface = field(
        default_factory=ServiceInterface)

    def __post_init__(self):
        names = ([p.name for p in self.event_inputs]
                 + [p.name for p in self.event_outputs]
                 + [p.name for p in self.data_inputs]
                 + [p.name for p in self.data_outputs])
        if len(names) != len(set(names)):
            raise ValueError(f"{self.name}: port names must be unique")
        din = {p.name for p in self.data_inputs}
        dout = {p.name for p in self.data_outputs}
        for ev in self.event_inputs:
            missing = set(ev.data) - din
            if missing:
                raise ValueError(f"{self.name}.{ev.name}: unknown data inputs {missing}")
        for ev in self.event_outputs:
            missing = set(ev.data) - dout
            if missing:
                raise ValueError(f"{self.name}.{ev.name}: unknown data outputs {missing}")

    def event_input(self, name: str) -> EventPort:
        for p in self.event_inputs:
            if p.name == name:
                return p
        raise UnknownPort(f"{self.name} has no event input {name}")

    def event_output(self, name: str) -> EventPort:
        for p in self.event_outputs:
            if p.name == name:
                return p
        raise UnknownPort(f"{self.name} has no event output {name}")

    def has_port(self, group: str, name: str) -> bool:
        ports = {"event_in": self.event_inputs, "event_out": self.event_outputs,
                 "data_in": self.data_inputs, "data_out": self.data_outputs}[group]
        return any(p.name == name for p in ports)


class TypeRegistry:
    def __init__(self):
        self._types: dict[str, FBTypeDef] = {}

    def register(self, type_def: FBTypeDef) -> str:
        if type_def.name in self._types:
            raise DuplicateType(type_def.name)
        if isinstance(type_def.kind, Composite):
            type_def = _expand_composite(type_def, self)
        self._types[type_def.name] = type_def
        return type_def.name

    def get(self, name: str) -> FBTypeDef:
        try:
            return self._types[name]
        except KeyError:
            raise UnknownType(name) from None

    def __contains__(self, name: str) -> bool:
        return name in self._types


@dataclass
class Delivery:
    target: str  # instance id
    event_input: str
    values: dict[str, Any]  # data input name -> sampled value


class FBInstance:
    """A live block inside a resource."""

    def __init__(self, instance_id: str, type_def: FBTypeDef,
                 resource: "Resource", inputs: dict[str, Any] | None = None,
                 binding: Any = None):
        self.instance_id = instance_id
        self.type = type_def
        self.resource = resource
        self.binding = binding
        self.data_inputs: dict[str, Any] = {
            p.name: p.initial() for p in type_def.data_inputs}
        if inputs:
            unknown = set(inputs) - set(self.data_inputs)
            if unknown:
                raise UnknownPort(f"{instance_id}: no data inputs {unknown}")
            self.data_inputs.update(inputs)
        self.data_outputs: dict[str, Any] = {
            p.name: p.initial() for p in type_def.data_outputs}
        # Hidden children created by composite expansion, removed with us.
        self.children: list[str] = []

    def input(self, name: str) -> Any:
        try:
            return self.data_inputs[name]
        except KeyError:
            raise UnknownPort(f"{self.instance_id} has no data input {name}") from None

    def set_output(self, name: str, value: Any) -> None:
        if name not in self.data_outputs:
            raise UnknownPort(f"{self.instance_id} has no data output {name}")
        self.data_outputs[name] = value

    def output(self, name: str) -> Any:
        try:
            return self.data_outputs[name]
        except KeyError:
            raise UnknownPort(f"{self.instance_id} has no data output {name}") from None

    def emit(self, event_output: str) -> int:
        return self.resource.emit(self, event_output)

    def __repr__(self):
        return f"<FBInstance {self.instance_id}:{self.type.name}>"


class Resource:
    """A container for a block network with one FIFO event queue."""

    def __init__(self, name: str, system: "System"):
        self.name = name
        self.system = system
        self.instances: dict[str, FBInstance] = {}
        self.connections: list[Connection] = []
        self.queue: deque[Delivery] = deque()
        self.trace: Optional[list[tuple[str, str]]] = None

    def enable_trace(self) -> None:
        self.trace = []

    # -- structure ----------------------------------------------------------

    def create_instance(self, type_name: str, instance_id: str,
                        inputs: dict[str, Any] | None = None,
                        binding: Any = None) -> FBInstance:
        type_def = self.system.types.get(type_name)
        if instance_id in self.instances:
            raise DuplicateInstance(instance_id)
        inst = FBInstance(instance_id, type_def, self, inputs, binding)
        self.instances[instance_id] = inst
        if getattr(type_def, "_composite", None) is not None:
            _instantiate_composite(self, inst, type_def)
        return inst

    def delete_instance(self, instance_id: str) -> None:
        inst = self.instances.get(instance_id)
        if inst is None:
            raise UnknownInstance(instance_id)
        for child in list(inst.children):
            if child in self.instances:
                self.delete_instance(child)
        self.connections = [c for c in self.connections
                            if c.source[0] != instance_id and c.target[0] != instance_id]
        self.queue = deque(d for d in self.queue if d.target != instance_id)
        del self.instances[instance_id]

    def _endpoint(self, ref: tuple[str, str]) -> FBInstance:
        inst = self.instances.get(ref[0])
        if inst is None:
            raise UnknownInstance(ref[0])
        return inst

    def create_connection(self, kind: ConnKind, source: tuple[str, str],
                          target: tuple[str, str]) -> Connection:
        src, tgt = self._endpoint(source), self._endpoint(target)
        if kind is ConnKind.EVENT:
            if not src.type.has_port("event_out", source[1]):
                raise IllegalConnection(f"{source} is not an event output")
            if not tgt.type.has_port("event_in", target[1]):
                raise IllegalConnection(f"{target} is not an event input")
        else:
            if not src.type.has_port("data_out", source[1]):
                raise IllegalConnection(f"{source} is not a data output")
            if not tgt.type.has_port("data_in", target[1]):
                raise IllegalConnection(f"{target} is not a data input")
            for c in self.connections:
                if c.kind is ConnKind.DATA and c.target == target:
                    raise IllegalConnection(
                        f"data input {target} already has a source")
        conn = Connection(kind, source, target)
        if conn in self.connections:
            raise IllegalConnection(f"duplicate connection {conn}")
        self.connections.append(conn)
        return conn

    def delete_connection(self, kind: ConnKind, source: tuple[str, str],
                          target: tuple[str, str]) -> None:
        conn = Connection(kind, source, target)
        try:
            self.connections.remove(conn)
        except ValueError:
            raise UnknownConnection(str(conn)) from None

    # -- execution ----------------------------------------------------------

    def emit(self, instance: FBInstance, event_output: str) -> int:
        """Enqueue one delivery per event connection, snapshotting data now."""
        port = instance.type.event_output(event_output)
        count = 0
        for conn in self.connections:
            if conn.kind is not ConnKind.EVENT:
                continue
            if conn.source != (instance.instance_id, event_output):
                continue
            values: dict[str, Any] = {}
            for data_out in port.data:
                sample = instance.data_outputs[data_out]
                for dc in self.connections:
                    if (dc.kind is ConnKind.DATA
                            and dc.source == (instance.instance_id, data_out)
                            and dc.target[0] == conn.target[0]):
                        values[dc.target[1]] = sample
            self.queue.append(Delivery(conn.target[0], conn.target[1], values))
            count += 1
        return count

    def enqueue_external(self, instance_id: str, event_input: str,
                         values: dict[str, Any]) -> None:
        """Entry point for service blocks fed from outside (transports)."""
        self.queue.append(Delivery(instance_id, event_input, dict(values)))

    def dispatch_step(self) -> int:
        if not self.queue:
            return 0
        delivery = self.queue.popleft()
        inst = self.instances.get(delivery.target)
        if inst is None:
            # Target vanished between enqueue and dispatch: drop.
            return 1
        inst.type.event_input(delivery.event_input)
        inst.data_inputs.update(delivery.values)
        if self.trace is not None:
            self.trace.append((inst.instance_id, delivery.event_input))
        self.system._enter_dispatch()
        try:
            self._invoke(inst, delivery.event_input)
        finally:
            self.system._leave_dispatch()
        return 1

    def _invoke(self, inst: FBInstance, event_input: str) -> None:
        kind = inst.type.kind
        if isinstance(kind, Basic):
            kind.handler(inst, event_input)
        elif isinstance(kind, ServiceInterface):
            if inst.binding is None:
                return  # unbound service block: events are absorbed
            inst.binding.on_event(inst, event_input)
        else:  # pragma: no cover - composites are expanded at registration
            raise AssertionError("composite reached dispatch unexpanded")

    def run_until_quiescent(self, max_steps: int = DEFAULT_STEP_BUDGET) -> int:
        if max_steps <= 0:
            raise ValueError("max_steps must be > 0")
        steps = 0
        while self.queue:
            if steps >= max_steps:
                raise StepBudgetExceeded(
                    f"{self.name}: queue not empty after {max_steps} steps")
            steps += self.dispatch_step()
        return steps


@dataclass
class Device:
    """A unit of control hosting zero or more resources."""

    name: str
    system: "System"
    management_endpoint: Any = None
    resources: dict[str, Resource] = field(default_factory=dict)

    def add_resource(self, name: str) -> Resource:
        if name in self.resources:
            raise DuplicateInstance(f"resource {name} in {self.name}")
        res = Resource(name, self.system)
        self.resources[name] = res
        return res

    def resource(self, name: str) -> Resource:
        try:
            return self.resources[name]
        except KeyError:
            raise UnknownInstance(f"{self.name}.{name}") from None


# --------------------------------------------------------------------------
# Management commands
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class CreateInstance:
    device: str
    resource: str
    type_name: str
    instance_id: str
    inputs: tuple[tuple[str, Any], ...] = ()
    binding: Any = None


@dataclass(frozen=True)
class DeleteInstance:
    device: str
    resource: str
    instance_id: str


@dataclass(frozen=True)
class CreateConnection:
    device: str
    resource: str
    kind: ConnKind
    source: tuple[str, str]
    target: tuple[str, str]


@dataclass(frozen=True)
class DeleteConnection:
    device: str
    resource: str
    kind: ConnKind
    source: tuple[str, str]
    target: tuple[str, str]


MgmtCommand = CreateInstance | DeleteInstance | CreateConnection | DeleteConnection


class System:
    """A set of devices sharing one type registry and one mgmt queue.

    All devices run in one process; a single depth counter serializes
    management commands against dispatch: commands issued while any delivery
    is being processed wait until that dispatch step finishes.
    """

    def __init__(self):
        self.types = TypeRegistry()
        self.devices: dict[str, Device] = {}
        self._dispatch_depth = 0
        self._pending: deque[Callable[[], None]] = deque()

    def add_device(self, name: str, management_endpoint: Any = None) -> Device:
        if name in self.devices:
            raise DuplicateInstance(f"device {name}")
        dev = Device(name, self, management_endpoint)
        self.devices[name] = dev
        return dev

    def device(self, name: str) -> Device:
        try:
            return self.devices[name]
        except KeyError:
            raise UnknownInstance(f"device {name}") from None

    def resources(self) -> list[Resource]:
        out = []
        for dev in self.devices.values():
            out.extend(dev.resources.values())
        return out

    def register_type(self, type_def: FBTypeDef) -> str:
        return self.types.register(type_def)

    # -- mgmt ----------------------------------------------------------------

    def _enter_dispatch(self) -> None:
        self._dispatch_depth += 1

    def _leave_dispatch(self) -> None:
        self._dispatch_depth -= 1
        if self._dispatch_depth == 0:
            self.drain_pending()

    @property
    def in_dispatch(self) -> bool:
        return self._dispatch_depth > 0

    def defer(self, fn: Callable[[], None]) -> None:
        """Run `fn` between dispatch steps (now, if none is executing)."""
        if self.in_dispatch:
            self._pending.append(fn)
        else:
            fn()

    def drain_pending(self) -> None:
        while self._pending and not self.in_dispatch:
            self._pending.popleft()()

    def mgmt(self, command: MgmtCommand) -> bool:
        """Apply (or queue) one management command.

        Returns True when the command was applied immediately; False when it
        was queued to run after the current dispatch step.  Errors from
        queued commands surface when the queue drains.
        """
        if self.in_dispatch:
            self._pending.append(lambda: self._apply(command))
            return False
        self._apply(command)
        return True

    def _apply(self, command: MgmtCommand) -> None:
        res = self.device(command.device).resource(command.resource)
        if isinstance(command, CreateInstance):
            res.create_instance(command.type_name, command.instance_id,
                                dict(command.inputs), command.binding)
        elif isinstance(command, DeleteInstance):
            res.delete_instance(command.instance_id)
        elif isinstance(command, CreateConnection):
            res.create_connection(command.kind, command.source, command.target)
        elif isinstance(command, DeleteConnection):
            res.delete_connection(command.kind, command.source, command.target)
        else:  # pragma: no cover
            raise TypeError(f"unknown command {command!r}")


# --------------------------------------------------------------------------
# Composite expansion
# --------------------------------------------------------------------------
#
# A composite type is rewritten at registration into a relay block with
# mirror ports, and its children become real instances created alongside it:
#
#   SELF.EI  -> child.ei   becomes   relay event output "_in_EI"  -> child.ei
#   SELF.di  -> child.di   becomes   relay data  output "_in_di"  -> child.di
#   child.eo -> SELF.EO    becomes   child.eo -> relay event input "_fwd_EO"
#   child.do -> SELF.do    becomes   child.do -> relay data  input "_fwd_do"
#
# The relay handler copies data across the boundary and re-emits, preserving
# the snapshot-at-emit rule through the extra hop.

def _expand_composite(type_def: FBTypeDef, registry: TypeRegistry) -> FBTypeDef:
    comp: Composite = type_def.kind  # type: ignore[assignment]
    child_types = {}
    for child_id, child_type in comp.children:
        if child_id == SELF:
            raise ValueError(f"{type_def.name}: child may not be named {SELF}")
        child_types[child_id] = registry.get(child_type)
    for link in comp.links:
        _check_link(type_def, child_types, link)

    extra_event_out = tuple(
        EventPort(f"_in_{p.name}", tuple(f"_in_{d}" for d in p.data))
        for p in type_def.event_inputs)
    extra_data_out = tuple(DataPort(f"_in_{p.name}", p.kind, p.default)
                           for p in type_def.data_inputs)
    extra_event_in = tuple(
        EventPort(f"_fwd_{p.name}", tuple(f"_fwd_{d}" for d in p.data))
        for p in type_def.event_outputs)
    extra_data_in = tuple(DataPort(f"_fwd_{p.name}", p.kind, p.default)
                          for p in type_def.data_outputs)

    ext_inputs = {p.name: p for p in type_def.event_inputs}
    ext_outputs = {p.name: p for p in type_def.event_outputs}

    def relay(inst: FBInstance, event: str) -> None:
        if event.startswith("_fwd_"):
            port = ext_outputs[event[len("_fwd_"):]]
            for d in port.data:
                inst.set_output(d, inst.input(f"_fwd_{d}"))
            inst.emit(port.name)
        else:
            port = ext_inputs[event]
            for d in port.data:
                inst.set_output(f"_in_{d}", inst.input(d))
            inst.emit(f"_in_{event}")

    expanded = FBTypeDef(
        name=type_def.name,
        event_inputs=type_def.event_inputs + extra_event_in,
        event_outputs=type_def.event_outputs + extra_event_out,
        data_inputs=type_def.data_inputs + extra_data_in,
        data_outputs=type_def.data_outputs + extra_data_out,
        kind=Basic(relay),
    )
    expanded._composite = comp  # type: ignore[attr-defined]
    return expanded


def _check_link(type_def: FBTypeDef, child_types: dict[str, FBTypeDef],
                link: BoundaryLink) -> None:
    def side(ref: tuple[str, str], group_self: str, group_child: str) -> None:
        owner, port = ref
        if owner == SELF:
            if not type_def.has_port(group_self, port):
                raise ValueError(f"{type_def.name}: no boundary port {port}")
        else:
            if owner not in child_types:
                raise ValueError(f"{type_def.name}: unknown child {owner}")
            if not child_types[owner].has_port(group_child, port):
                raise ValueError(f"{type_def.name}: {owner} has no port {port}")

    if link.kind is ConnKind.EVENT:
        if link.source[0] == SELF:
            side(link.source, "event_in", ""), side(link.target, "", "event_in")
        else:
            side(link.source, "", "event_out")
            side(link.target, "event_out", "event_in")
    else:
        if link.source[0] == SELF:
            side(link.source, "data_in", ""), side(link.target, "", "data_in")
        else:
            side(link.source, "", "data_out")
            side(link.target, "data_out", "data_in")


def _instantiate_composite(resource: Resource, inst: FBInstance,
                           type_def: FBTypeDef) -> None:
    comp: Composite = type_def._composite  # type: ignore[attr-defined]
    prefix = inst.instance_id
    for child_id, child_type in comp.children:
        child = resource.create_instance(child_type, f"{prefix}.{child_id}")
        inst.children.append(child.instance_id)

    def resolve(ref: tuple[str, str], boundary_prefix: str) -> tuple[str, str]:
        owner, port = ref
        if owner == SELF:
            return (prefix, f"{boundary_prefix}{port}")
        return (f"{prefix}.{owner}", port)

    for link in comp.links:
        if link.source[0] == SELF:
            src = resolve(link.source, "_in_")
            tgt = resolve(link.target, "")
        elif link.target[0] == SELF:
            src = resolve(link.source, "")
            tgt = resolve(link.target, "_fwd_")
        else:
            src, tgt = resolve(link.source, ""), resolve(link.target, "")
        resource.create_connection(link.kind, src, tgt)
