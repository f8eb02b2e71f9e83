"""Exception hierarchy shared across the toolchain."""


class BincovError(Exception):
    """Base class for all tool errors."""


# --- ELF loading / layout ---

class NotElf(BincovError):
    pass


class UnsupportedArch(BincovError):
    pass


class MalformedHeaders(BincovError):
    pass


class NoDefinitionSource(BincovError):
    pass


class MalformedLsda(BincovError):
    pass


class NoHeaderSpace(BincovError):
    """No room to place extra program headers; re-link with a reserved gap."""


# --- disassembly / CFG ---

class UndecodableByte(BincovError):
    def __init__(self, addr, msg=""):
        super().__init__(f"undecodable byte at {addr:#x} {msg}".rstrip())
        self.addr = addr


# --- jump table analysis ---

class SliceAbort(BincovError):
    """Slice rejected; indirect jmp is treated as a tail call."""


class EmulationFault(BincovError):
    def __init__(self, addr, reason):
        super().__init__(f"emulation fault at {addr:#x}: {reason}")
        self.addr = addr
        self.reason = reason


class CapExceeded(BincovError):
    pass


# --- patching ---

class Unencodable(BincovError):
    pass


class OffsetOverflow(BincovError):
    pass


class PatchConflict(BincovError):
    pass


# --- coverage data ---

class BadMagic(BincovError):
    pass


class VersionMismatch(BincovError):
    pass


class Truncated(BincovError):
    pass


class HeaderMismatch(BincovError):
    pass


class PolicyMismatch(BincovError):
    pass


class HashMismatch(BincovError):
    pass


class UnknownSuperblockId(BincovError):
    pass


# --- verification ---

class TraceeCrash(BincovError):
    pass


class TraceTimeout(BincovError):
    pass


class ModuleMismatch(BincovError):
    pass


class CompilerMissing(BincovError):
    pass
