"""Exception hierarchy shared by all holonfab modules."""


class HolonFabError(Exception):
    """Base class for every error raised by this package."""


# --- function-block runtime ---------------------------------------------

class DuplicateType(HolonFabError):
    pass


class UnknownType(HolonFabError):
    pass


class DuplicateInstance(HolonFabError):
    pass


class UnknownInstance(HolonFabError):
    pass


class IllegalConnection(HolonFabError):
    """Kind mismatch, unknown port, or second source on a data input."""


class UnknownConnection(IllegalConnection):
    pass


class UnknownPort(HolonFabError):
    pass


class StepBudgetExceeded(HolonFabError):
    """run_until_quiescent hit its step budget; likely an event cycle."""


# --- messaging ------------------------------------------------------------

class BadChannel(HolonFabError):
    """Channel address text does not parse as A.B.C.D:port."""


class ChannelInUse(HolonFabError):
    pass


class ChannelClosed(HolonFabError):
    pass


class TransportUnavailable(HolonFabError):
    """UDP bind or group join failed."""


class MalformedPayload(HolonFabError):
    """Envelope payload did not decode as a protocol message."""


# --- protocol codec -------------------------------------------------------

class MalformedXml(HolonFabError):
    pass


class SchemaViolation(HolonFabError):
    pass


class MissingAttribute(SchemaViolation):
    def __init__(self, attribute: str, type_name: str = ""):
        self.attribute = attribute
        self.type_name = type_name
        where = f" on {type_name}" if type_name else ""
        super().__init__(f"missing attribute {attribute}{where}")


class BadTime(SchemaViolation):
    pass


# --- holons / orders ------------------------------------------------------

class UnknownProduct(HolonFabError):
    pass


class CyclicProduct(HolonFabError):
    pass


class HolonBusy(HolonFabError):
    """Despawn requested while the holon's plan is not terminal."""


# --- scheduling -----------------------------------------------------------

class SlotConflict(HolonFabError):
    """The awarded window is no longer free; requester must re-negotiate."""


class UnknownBid(SlotConflict):
    """Award referenced a conversation this holon never bid on."""


class NoProvider(HolonFabError):
    pass


class NoBids(HolonFabError):
    pass


class AwardFailed(HolonFabError):
    """Negotiation gave up after repeated slot conflicts."""


# --- cell simulation ------------------------------------------------------

class OverCapacity(HolonFabError):
    pass


# --- gateway --------------------------------------------------------------

class ConfigError(HolonFabError):
    pass


class BindFailure(HolonFabError):
    pass
