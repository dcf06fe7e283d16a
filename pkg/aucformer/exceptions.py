from numerics.exceptions import EGAError


class AuctionError(EGAError):
    """Base class for allocation and payment errors."""


class InvalidBidError(AuctionError, ValueError):
    """Bid is not strictly positive."""


class SlotCountError(AuctionError, ValueError):
    """More slots requested than candidates can fill."""
