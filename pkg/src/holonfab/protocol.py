"""XML message codec for the inter-holon protocol.

Every message on the wire is a single XML element: the element name is the
message type, the data rides in attributes (and, rarely, child elements).
Encoding is canonical so that the same message always yields the same bytes:
attributes appear in schema-declared order, values are double-quoted, and
childless elements self-close.
"""

from __future__ import annotations

import re
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field

from .errors import (
    BadTime,
    MalformedXml,
    MissingAttribute,
    SchemaViolation,
)

# Seconds since 1970-01-01T00:00:00Z, whole seconds only.
EpochTime = int

_NAME_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_.\-]*$")


def is_valid_name(name: str) -> bool:
    """True when usable as an XML element/attribute name (no namespaces)."""
    return bool(_NAME_RE.match(name))


@dataclass
class Message:
    """One protocol message: an XML element with attributes and children."""

    type_name: str
    attributes: dict[str, str] = field(default_factory=dict)
    children: list["Message"] = field(default_factory=list)

    def __post_init__(self):
        if not is_valid_name(self.type_name):
            raise SchemaViolation(f"bad element name: {self.type_name!r}")
        for name in self.attributes:
            if not is_valid_name(name):
                raise SchemaViolation(f"bad attribute name: {name!r}")

    def get(self, name: str) -> str | None:
        return self.attributes.get(name)

    def require(self, name: str) -> str:
        try:
            return self.attributes[name]
        except KeyError:
            raise MissingAttribute(name, self.type_name) from None


# --------------------------------------------------------------------------
# Schemas
# --------------------------------------------------------------------------

TEXT = "text"
INT = "int"        # non-negative integer
TIME = "time"      # EpochTime: non-negative integer seconds
CHANNEL = "channel"  # A.B.C.D:port
BOOL = "bool"      # "true" / "false"


@dataclass(frozen=True)
class AttrSpec:
    name: str
    kind: str = TEXT
    required: bool = True


@dataclass(frozen=True)
class MessageSchema:
    type_name: str
    attrs: tuple[AttrSpec, ...]
    child_types: tuple[str, ...] = ()

    def attr_order(self) -> list[str]:
        return [a.name for a in self.attrs]


def _schema(name: str, *attrs: AttrSpec, children: tuple[str, ...] = ()) -> MessageSchema:
    return MessageSchema(name, tuple(attrs), children)


# Negotiation conversation, service directory, execution and order
# management vocabulary.  Monitor-only types (bottom group) flow solely on
# the operator/monitoring channel.
SCHEMAS: dict[str, MessageSchema] = {s.type_name: s for s in [
    _schema("GetBidForOp",
            AttrSpec("ID"), AttrSpec("OpID"),
            AttrSpec("MinStartTime", TIME), AttrSpec("Sender", CHANNEL)),
    _schema("RspBidForOp",
            AttrSpec("ID"), AttrSpec("OpID"),
            AttrSpec("StartTime", TIME), AttrSpec("ExecTime", INT),
            AttrSpec("Sender", CHANNEL)),
    _schema("AwardOp",
            AttrSpec("ID"), AttrSpec("OpID"),
            AttrSpec("StartTime", TIME), AttrSpec("Sender", CHANNEL)),
    _schema("ConfirmOp",
            AttrSpec("ID"), AttrSpec("OpID"), AttrSpec("Accepted", BOOL)),
    _schema("CancelOp", AttrSpec("ID"), AttrSpec("OpID")),
    _schema("RegisterService",
            AttrSpec("ServID"), AttrSpec("HolonAddr", CHANNEL)),
    _schema("LookupService",
            AttrSpec("ServID"), AttrSpec("Sender", CHANNEL)),
    _schema("RspLookup", AttrSpec("ServID"), children=("Provider",)),
    _schema("Provider", AttrSpec("HolonAddr", CHANNEL)),
    _schema("ExecOp",
            AttrSpec("OpID"), AttrSpec("ServID"),
            AttrSpec("StartTime", TIME), AttrSpec("ExecTime", INT),
            AttrSpec("ReplyTo", CHANNEL)),
    _schema("OpProgress", AttrSpec("OpID"), AttrSpec("Percent", INT)),
    _schema("OpDone", AttrSpec("OpID")),
    _schema("CreateOrder",
            AttrSpec("Product"),
            AttrSpec("OrderID", TEXT, required=False),
            AttrSpec("Parent", CHANNEL, required=False)),
    _schema("OrderStatus",
            AttrSpec("OrderID"), AttrSpec("Percent", INT),
            AttrSpec("State", TEXT, required=False)),
    _schema("PlanReady", AttrSpec("OrderID"), AttrSpec("EndTime", TIME)),
    _schema("DespawnOrder", AttrSpec("OrderID")),
    # Monitoring vocabulary.
    _schema("HolonCreated",
            AttrSpec("HolonID"), AttrSpec("Kind"),
            AttrSpec("Inbox", CHANNEL),
            AttrSpec("OrderID", TEXT, required=False),
            AttrSpec("Product", TEXT, required=False),
            AttrSpec("Parent", TEXT, required=False)),
    _schema("HolonRemoved",
            AttrSpec("HolonID"), AttrSpec("OrderID", TEXT, required=False)),
    _schema("SlotCommitted",
            AttrSpec("HolonID"), AttrSpec("ServID"), AttrSpec("ID"),
            AttrSpec("OrderID"),
            AttrSpec("StartTime", TIME), AttrSpec("EndTime", TIME)),
    _schema("OpStarted",
            AttrSpec("OpID"), AttrSpec("ServID"), AttrSpec("HolonID"),
            AttrSpec("StartTime", TIME)),
    _schema("Overrun", AttrSpec("OpID"), AttrSpec("Delay", INT)),
]}


def _check_value(spec: AttrSpec, value: str, type_name: str) -> None:
    if spec.kind == TIME or spec.kind == INT:
        try:
            n = int(value)
        except ValueError:
            raise BadTime(f"{type_name}.{spec.name}={value!r} is not an integer")
        if n < 0:
            raise BadTime(f"{type_name}.{spec.name}={value!r} is negative")
    elif spec.kind == BOOL:
        if value not in ("true", "false"):
            raise SchemaViolation(f"{type_name}.{spec.name}={value!r} is not a bool")
    elif spec.kind == CHANNEL:
        # Deferred import keeps this module free of messaging dependencies.
        from .channels import ChannelId
        ChannelId.parse(value)


def validate(message: Message) -> Message:
    """Validate a message against its schema, if the type is known.

    Unknown type names pass through untouched (strict validation only applies
    to the declared vocabulary).  Returns the message for chaining.
    """
    schema = SCHEMAS.get(message.type_name)
    if schema is None:
        return message
    declared = {a.name: a for a in schema.attrs}
    for spec in schema.attrs:
        value = message.attributes.get(spec.name)
        if value is None:
            if spec.required:
                raise MissingAttribute(spec.name, message.type_name)
            continue
        _check_value(spec, value, message.type_name)
    for name in message.attributes:
        if name not in declared:
            raise SchemaViolation(
                f"unexpected attribute {name} on {message.type_name}")
    for child in message.children:
        if child.type_name not in schema.child_types:
            raise SchemaViolation(
                f"unexpected child {child.type_name} on {message.type_name}")
        validate(child)
    return message


# --------------------------------------------------------------------------
# Codec
# --------------------------------------------------------------------------

def _escape(value: str) -> str:
    return (value.replace("&", "&amp;").replace("<", "&lt;")
                 .replace(">", "&gt;").replace('"', "&quot;"))


def _ordered_attrs(message: Message) -> list[tuple[str, str]]:
    schema = SCHEMAS.get(message.type_name)
    if schema is None:
        return list(message.attributes.items())
    order = schema.attr_order()
    return [(n, message.attributes[n]) for n in order if n in message.attributes]


def encode(message: Message) -> str:
    """Serialize to canonical UTF-8 text; the message must be schema-valid."""
    validate(message)
    parts = [f"<{message.type_name}"]
    for name, value in _ordered_attrs(message):
        parts.append(f' {name}="{_escape(value)}"')
    if message.children:
        parts.append(">")
        for child in message.children:
            parts.append(encode(child))
        parts.append(f"</{message.type_name}>")
    else:
        parts.append(" />")
    return "".join(parts)


def _from_element(elem: ET.Element) -> Message:
    if "{" in elem.tag:
        raise MalformedXml(f"namespaced element {elem.tag!r} not supported")
    if elem.text and elem.text.strip():
        raise MalformedXml(f"unexpected text content in <{elem.tag}>")
    children = []
    for child in elem:
        if child.tail and child.tail.strip():
            raise MalformedXml(f"unexpected text content in <{elem.tag}>")
        children.append(_from_element(child))
    try:
        return Message(elem.tag, dict(elem.attrib), children)
    except SchemaViolation as exc:
        raise MalformedXml(str(exc)) from exc


def decode(text: str | bytes) -> Message:
    """Parse one XML element into a Message.

    Unknown type names decode fine; strict checking is `validate`'s job.
    """
    if isinstance(text, bytes):
        try:
            text = text.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedXml(f"payload is not UTF-8: {exc}") from exc
    try:
        root = ET.fromstring(text)
    except ET.ParseError as exc:
        raise MalformedXml(str(exc)) from exc
    return _from_element(root)


# --------------------------------------------------------------------------
# Typed views of the negotiation pair
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class BidRequest:
    """Call for bids: execute `op_id` starting no earlier than `min_start`."""

    conversation: str
    op_id: str
    min_start: EpochTime
    sender: str  # requester inbox, A.B.C.D:port

    def to_message(self) -> Message:
        return Message("GetBidForOp", {
            "ID": self.conversation,
            "OpID": self.op_id,
            "MinStartTime": str(self.min_start),
            "Sender": self.sender,
        })

    @classmethod
    def from_message(cls, msg: Message) -> "BidRequest":
        validate(msg)
        if msg.type_name != "GetBidForOp":
            raise SchemaViolation(f"expected GetBidForOp, got {msg.type_name}")
        return cls(msg.require("ID"), msg.require("OpID"),
                   int(msg.require("MinStartTime")), msg.require("Sender"))


@dataclass(frozen=True)
class BidResponse:
    """A bid: the operation can start at `start` and takes `exec_time` s."""

    conversation: str
    op_id: str
    start: EpochTime
    exec_time: int
    sender: str  # bidder inbox

    @property
    def finish(self) -> EpochTime:
        return self.start + self.exec_time

    def to_message(self) -> Message:
        return Message("RspBidForOp", {
            "ID": self.conversation,
            "OpID": self.op_id,
            "StartTime": str(self.start),
            "ExecTime": str(self.exec_time),
            "Sender": self.sender,
        })

    @classmethod
    def from_message(cls, msg: Message) -> "BidResponse":
        validate(msg)
        if msg.type_name != "RspBidForOp":
            raise SchemaViolation(f"expected RspBidForOp, got {msg.type_name}")
        return cls(msg.require("ID"), msg.require("OpID"),
                   int(msg.require("StartTime")), int(msg.require("ExecTime")),
                   msg.require("Sender"))

    def check_against(self, request: BidRequest) -> "BidResponse":
        """Enforce bid validity for a known conversation."""
        if self.conversation != request.conversation:
            raise SchemaViolation("bid answers a different conversation")
        if self.start < request.min_start:
            raise SchemaViolation(
                f"bid starts at {self.start}, before requested {request.min_start}")
        if self.exec_time <= 0:
            raise SchemaViolation("bid has non-positive ExecTime")
        return self


# --------------------------------------------------------------------------
# Product processing documents
# --------------------------------------------------------------------------

SIMPLE = "Simple"
COMPOSITE = "Composite"


@dataclass(frozen=True)
class ServiceStep:
    """One entry of a product's service list."""

    index: int
    serv_id: str
    components: tuple[str, ...] = ()


@dataclass(frozen=True)
class ProductSpec:
    """Processing document of one product: its kind and required services."""

    name: str
    kind: str  # SIMPLE | COMPOSITE
    services: tuple[ServiceStep, ...]

    @property
    def is_composite(self) -> bool:
        return self.kind == COMPOSITE

    def component_names(self) -> list[str]:
        out: list[str] = []
        for step in self.services:
            out.extend(step.components)
        return out


def parse_product(text: str | bytes) -> ProductSpec:
    """Parse a product processing document (one <Product> element)."""
    msg = decode(text)
    if msg.type_name != "Product":
        raise SchemaViolation(f"expected <Product>, got <{msg.type_name}>")
    name = msg.require("Name")
    kind = msg.require("Type")
    if kind not in (SIMPLE, COMPOSITE):
        raise SchemaViolation(f"Product Type must be Simple or Composite, got {kind!r}")
    steps: list[ServiceStep] = []
    for pos, child in enumerate(msg.children, start=1):
        if child.type_name != "Service":
            raise SchemaViolation(f"unexpected <{child.type_name}> in <Product>")
        try:
            index = int(child.require("Index"))
        except ValueError:
            raise SchemaViolation(f"bad Service Index {child.get('Index')!r}") from None
        if index != pos:
            raise SchemaViolation(
                f"Service Index values must be contiguous 1..n; got {index} at position {pos}")
        serv_id = child.require("ServID")
        components: tuple[str, ...] = ()
        nr_cmp = child.get("NrCmp")
        if kind == SIMPLE:
            if nr_cmp is not None or any(a.startswith("Cmp") for a in child.attributes):
                raise SchemaViolation("Simple product services declare no components")
        else:
            if nr_cmp is None:
                raise SchemaViolation("Composite product services must declare NrCmp")
            try:
                n = int(nr_cmp)
            except ValueError:
                raise SchemaViolation(f"bad NrCmp {nr_cmp!r}") from None
            if n < 1:
                raise SchemaViolation("NrCmp must be >= 1")
            cmps = []
            for i in range(1, n + 1):
                value = child.get(f"Cmp{i}")
                if value is None:
                    raise SchemaViolation(f"NrCmp={n} but Cmp{i} missing")
                cmps.append(value)
            extra = [a for a in child.attributes
                     if a.startswith("Cmp") and a not in {f"Cmp{i}" for i in range(1, n + 1)}]
            if extra:
                raise SchemaViolation(f"component attributes beyond NrCmp: {extra}")
            components = tuple(cmps)
        steps.append(ServiceStep(index, serv_id, components))
    if not steps:
        raise SchemaViolation("product declares no services")
    return ProductSpec(name, kind, tuple(steps))


# --------------------------------------------------------------------------
# Service definition documents
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ServiceDef:
    """A capability of the cell: stored pick-and-place runs or board joining.

    `steps` is the pick-and-place operation count; each step consumes one
    magazine component.  steps == 0 marks a board-joining assembly, which
    consumes no components and needs no robot-memory slot.
    """

    serv_id: str
    base_exec: int  # seconds, excluding any load time
    steps: int

    @property
    def resident_required(self) -> bool:
        return self.steps > 0

    @property
    def is_join(self) -> bool:
        return self.steps == 0


def parse_services(text: str | bytes) -> list[ServiceDef]:
    """Parse a <Services> document into service definitions."""
    msg = decode(text)
    if msg.type_name != "Services":
        raise SchemaViolation(f"expected <Services>, got <{msg.type_name}>")
    defs: list[ServiceDef] = []
    seen: set[str] = set()
    for child in msg.children:
        if child.type_name != "Service":
            raise SchemaViolation(f"unexpected <{child.type_name}> in <Services>")
        serv_id = child.require("ServID")
        if serv_id in seen:
            raise SchemaViolation(f"duplicate ServID {serv_id}")
        seen.add(serv_id)
        try:
            base_exec = int(child.require("BaseExec"))
            steps = int(child.require("Steps"))
        except ValueError:
            raise SchemaViolation(f"bad integer on Service {serv_id}") from None
        if base_exec <= 0 or steps < 0:
            raise SchemaViolation(f"bad BaseExec/Steps on Service {serv_id}")
        defs.append(ServiceDef(serv_id, base_exec, steps))
    return defs


def service_to_xml(sd: ServiceDef) -> str:
    return encode(Message("Service", {
        "ServID": sd.serv_id, "BaseExec": str(sd.base_exec), "Steps": str(sd.steps)}))
